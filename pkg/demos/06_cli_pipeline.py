"""
The command-line pipeline
=========================

Everything the library does is also scriptable through the `dpbeam`
console command. This demo drives the full loop in a scratch directory:
simulate a little corpus, train briefly, enhance a clip, and score the
result. It shells out exactly as a user would.
"""

import json
import pathlib
import subprocess
import sys
import tempfile

scratch = pathlib.Path(tempfile.mkdtemp(prefix="dpbeam_demo_"))
print(f"working in {scratch}\n")


def run(*args):
    cmd = [sys.executable, "-m", "dpbeam.cli", *args]
    print("$ dpbeam " + " ".join(args))
    res = subprocess.run(cmd, capture_output=True, text=True)
    if res.returncode != 0:
        print(res.stderr)
        raise SystemExit(f"command failed with exit code {res.returncode}")
    return res.stdout


# 1. Simulate six half-second training examples (each directory holds
#    mixture.wav, target.wav and the scene metadata).
run("simulate", "--n", "6", "--seed", "5", "--out", str(scratch / "data"),
    "--duration", "0.5", "--quiet")
meta = json.loads((scratch / "data" / "00000" / "meta.json").read_text())
print(f"  example 0: rt60 {meta['rt60']:.2f} s, SIR {meta['sir_db']:+.1f} dB, "
      f"target at {meta['target_doa_deg']:.0f} deg\n")

# 2. Train the quarter-size architecture for one epoch, holding out one
#    example. This is a smoke run, not a serious model.
out = run("train", "--data", str(scratch / "data"),
          "--out", str(scratch / "model.ckpt"),
          "--arch", "less", "--epochs", "1", "--batch", "2",
          "--crop-seconds", "0.25", "--holdout", "1", "--quiet")
print("  " + "\n  ".join(out.strip().splitlines()[-6:]) + "\n")

# 3. Enhance the held-out clip and dump the beamforming weights and a dB
#    spectrogram of the estimate alongside the audio.
clip = scratch / "data" / "00005" / "mixture.wav"
out = run("enhance", "--model", str(scratch / "model.ckpt"),
          "--in", str(clip), "--out", str(scratch / "est.wav"),
          "--dump-spec", str(scratch / "est_spec.bin"), "--quiet")
print("  " + out.strip().replace("\n", "\n  ") + "\n")

# 4. Score the whole corpus against the oracle MVDR baseline.
out = run("eval", "--data", str(scratch / "data"),
          "--method", "mvdr-oracle",
          "--report", str(scratch / "oracle.json"), "--quiet")
print("  " + out.strip().replace("\n", "\n  ") + "\n")

report = json.loads((scratch / "oracle.json").read_text())
print(f"oracle improvement over {len(report['clips'])} clips: "
      f"{report['mean_enhanced_si_sdr'] - report['mean_input_si_sdr']:+.2f} dB")
print(f"artifacts left in {scratch}")
