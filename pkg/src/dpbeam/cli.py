"""Command-line entry points: one executable, six subcommands.

    simulate   render example directories (mixture.wav, target.wav, meta.json)
    features   dump model input tensors for a mixture to flat containers
    train      optimize a beamformer on a directory of examples
    enhance    run a trained beamformer over one mixture
    eval       score dptbf / mvdr-oracle / none over a directory
    gradcheck  finite-difference audit of every learnable block

Exit codes: 0 success, 1 usage, 2 validation (bad values, malformed or
inconsistent inputs, failed gradcheck), 3 runtime (I/O and the rest).
Every run prints its resolved configuration and seed to stderr, artifacts
are written via temp-file-plus-rename, and inputs are never modified.

Heavy imports happen inside the subcommands so that `--threads` can cap the
BLAS/OpenMP pools before numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through our own codes
    def error(self, message):
        raise UsageError(message)


def _common_flags():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="RNG seed for anything stochastic (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP worker threads")
    common.add_argument("--stft", default=None, metavar="fft=512,hop=256,win=hann",
                        help="override analysis geometry")
    common.add_argument("--quiet", action="store_true",
                        help="suppress the resolved-config log line")
    return common


def build_parser():
    parser = _Parser(prog="dpbeam",
                     description=__doc__.splitlines()[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    common = _common_flags()
    sub = parser.add_subparsers(dest="cmd", metavar="subcommand")

    p = sub.add_parser("simulate", parents=[common],
                       help="render random training examples to a directory")
    p.add_argument("--n", type=int, required=True, help="number of examples")
    p.add_argument("--out", default="simulated", help="output directory")
    p.add_argument("--rt60", type=float, default=None,
                   help="fix the reverberation time instead of sampling")
    p.add_argument("--sir", type=float, default=None, help="fix the SIR in dB")
    p.add_argument("--snr", type=float, default=None, help="fix the SNR in dB")
    p.add_argument("--duration", type=float, default=None,
                   help="clip length in seconds (default 4.0)")
    p.add_argument("--mics", type=int, default=None,
                   help="microphones in the array (default 4)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", parents=[common],
                       help="dump feature and covariance tensors for a mixture")
    p.add_argument("--in", dest="in_path", required=True, metavar="WAV",
                   help="multichannel mixture")
    p.add_argument("--doa", type=float, default=None,
                   help="target direction in degrees (default: sibling meta.json)")
    p.add_argument("--out", default=None, metavar="PREFIX",
                   help="output prefix (default: input path minus .wav)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common],
                       help="train a beamformer on simulated examples")
    p.add_argument("--data", required=True, help="directory of example dirs")
    p.add_argument("--out", required=True, metavar="CKPT",
                   help="checkpoint path (sidecar CKPT.json records configs)")
    p.add_argument("--config", default=None, metavar="FILE",
                   help="key=value settings file; explicit flags win")
    p.add_argument("--arch", choices=("default", "less"), default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--decay", type=float, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--crop-seconds", type=float, default=None)
    p.add_argument("--loss-weights", default=None, metavar="W_SI,W_MAG")
    p.add_argument("--mag-power", type=float, default=None)
    p.add_argument("--holdout", type=int, default=None,
                   help="examples reserved (from the end) for the final report")
    p.add_argument("--dtype", choices=("float32", "float64"), default=None,
                   help="parameter/activation precision (default float32)")
    p.add_argument("--log-every", type=int, default=None,
                   help="progress print period in steps")
    p.add_argument("--no-freq-attention", action="store_true",
                   help="drop the per-frame attention over frequency")
    p.add_argument("--gru-skip", action="store_true",
                   help="add the skip connection around the GRU stack")
    p.add_argument("--causal", action="store_true",
                   help="causal masking in the cross-attention block")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[common],
                       help="run a trained beamformer over one mixture")
    p.add_argument("--model", required=True, metavar="CKPT")
    p.add_argument("--in", dest="in_path", required=True, metavar="WAV")
    p.add_argument("--doa", type=float, default=None,
                   help="target direction in degrees (default: sibling meta.json)")
    p.add_argument("--out", required=True, metavar="WAV")
    p.add_argument("--dump-weights", default=None, metavar="BIN",
                   help="write the complex beamforming weights [F,T,M]")
    p.add_argument("--dump-spec", default=None, metavar="BIN",
                   help="write the enhanced magnitude spectrogram in dB (+.csv)")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", parents=[common],
                       help="score an enhancement method over a directory")
    p.add_argument("--data", required=True, help="directory of example dirs")
    p.add_argument("--model", default=None, metavar="CKPT",
                   help="checkpoint (required for --method dptbf)")
    p.add_argument("--report", default=None, metavar="JSON",
                   help="write the full report here")
    p.add_argument("--method", choices=("dptbf", "mvdr-oracle", "none"),
                   default="dptbf")
    p.add_argument("--limit", type=int, default=None,
                   help="evaluate only the first N examples")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference audit of the learnable blocks")
    p.add_argument("--all", action="store_true",
                   help="run the full suite (also the default)")
    p.add_argument("--max-elems", type=int, default=30,
                   help="coordinates probed per large tensor")
    p.set_defaults(func=cmd_gradcheck)

    return parser


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be at least 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _log_run(args):
    if getattr(args, "quiet", False):
        return
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    print(f"[dpbeam] resolved config: {json.dumps(payload, sort_keys=True)}",
          file=sys.stderr)


def parse_stft(text):
    """'fft=512,hop=256,win=hann' (any subset) -> StftConfig."""
    from .stft import StftConfig

    if not text:
        return StftConfig()
    mapping = {"fft": "n_fft", "hop": "hop", "win": "window"}
    kwargs = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep or key not in mapping:
            raise ValueError(
                f"bad --stft entry {part!r}; expected fft=/hop=/win=")
        kwargs[mapping[key]] = value if key == "win" else int(value)
    return StftConfig(**kwargs)


def _sibling_meta(wav_path):
    """meta.json next to a mixture, if the clip came from `simulate`."""
    path = os.path.join(os.path.dirname(os.path.abspath(wav_path)), "meta.json")
    if not os.path.exists(path):
        return None
    with open(path) as f:
        return json.load(f)


def _geometry_and_doa(wav_path, n_mics, doa_deg_flag):
    """Array geometry and DOA (radians) for a bare mixture file.

    A sibling meta.json (written by `simulate`) supplies mic positions and
    the ground-truth DOA; otherwise the default linear array is assumed and
    --doa is mandatory. An explicit --doa always wins.
    """
    import numpy as np

    from .features import ArrayGeometry
    from .roomsim import RoomSpec

    meta = _sibling_meta(wav_path)
    geom = None
    doa_deg = doa_deg_flag
    if meta is not None:
        room = RoomSpec(tuple(meta["dims"]), meta["rt60"],
                        tuple(tuple(p) for p in meta["source_positions"]),
                        tuple(tuple(p) for p in meta["mic_positions"]),
                        meta["max_image_order"])
        geom = room.geometry()
        if doa_deg is None:
            doa_deg = meta["target_doa_deg"]
    if doa_deg is None:
        raise ValueError("--doa is required when no meta.json sits next to "
                         "the input")
    if geom is None:
        geom = ArrayGeometry.default_linear(n_mics)
    return geom, float(np.deg2rad(doa_deg))


def _load_model(ckpt_path, dtype=None):
    """Checkpoint plus its sidecar JSON -> DualPathBeamformer."""
    import numpy as np

    from .model import BeamformerConfig, DualPathBeamformer

    sidecar = ckpt_path + ".json"
    if not os.path.exists(sidecar):
        raise ValueError(f"missing sidecar {sidecar}; it records the "
                         "architecture the checkpoint was trained with")
    with open(sidecar) as f:
        meta = json.load(f)
    cfg = BeamformerConfig.from_dict(meta["model"])
    dtype = np.dtype(dtype or meta.get("dtype", "float32"))
    return DualPathBeamformer.load(ckpt_path, cfg, dtype=dtype), meta


def dump_spectrogram(spec, path):
    """Magnitude in dB as a tensor container plus a CSV twin at path+'.csv'.

    dB values follow 20*log10(|.| + 1e-5), so silence floors at -100.
    """
    import io as _io

    import numpy as np

    from .container import atomic_write, save_tensor
    from .stft import magnitude_db

    data = spec.data
    if data.ndim == 3 and data.shape[0] == 1:
        data = data[0]
    db = magnitude_db(data).astype(np.float32)
    save_tensor(path, db, cfg=spec.cfg)
    buf = _io.StringIO()
    np.savetxt(buf, db, fmt="%.4f", delimiter=",")
    atomic_write(path + ".csv", buf.getvalue().encode())
    return db


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    from .roomsim import DatasetConfig, sample_example, save_example

    if args.n < 1:
        raise ValueError("--n must be at least 1")
    overrides = {}
    if args.rt60 is not None:
        overrides["rt60_range"] = (args.rt60, args.rt60)
    if args.sir is not None:
        overrides["sir_range"] = (args.sir, args.sir)
    if args.snr is not None:
        overrides["snr_range"] = (args.snr, args.snr)
    if args.duration is not None:
        overrides["duration"] = args.duration
    if args.mics is not None:
        overrides["n_mics"] = args.mics
    cfg = DatasetConfig(**overrides)
    seed = 0 if args.seed is None else args.seed
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n):
        example = sample_example(seed, i, cfg)
        save_example(os.path.join(args.out, f"{i:05d}"), example,
                     cfg.sample_rate)
    print(f"wrote {args.n} examples under {args.out}")
    return EXIT_OK


def cmd_features(args):
    import numpy as np

    from .container import save_tensor
    from .features import assemble_inputs
    from .stft import stft
    from .wavio import read_wav

    stft_cfg = parse_stft(args.stft)
    _, data = read_wav(args.in_path, expect_rate=stft_cfg.sample_rate)
    mixture = np.atleast_2d(data)
    geom, doa = _geometry_and_doa(args.in_path, mixture.shape[0], args.doa)
    spec = stft(mixture, stft_cfg)
    feats, cov = assemble_inputs(spec, doa, geom)
    prefix = args.out
    if prefix is None:
        prefix = args.in_path[:-4] if args.in_path.endswith(".wav") else args.in_path
    feat_path, cov_path = prefix + ".features.bin", prefix + ".cov.bin"
    save_tensor(feat_path, feats.data.astype(np.float32))
    save_tensor(cov_path, cov.data.astype(np.float32))
    print(f"features {feats.data.shape} -> {feat_path}")
    print(f"covariance {cov.data.shape} -> {cov_path}")
    return EXIT_OK


def _read_kv_config(path):
    """key=value lines; blank lines and # comments ignored."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value, "
                                 f"got {raw.strip()!r}")
            out[key.strip()] = value.strip()
    return out


_TRAIN_KEYS = {
    "lr": float, "decay": float, "clip_norm": float, "batch": int,
    "epochs": int, "seed": int, "crop_seconds": float, "mag_power": float,
    "log_every": int,
}
_RUN_KEYS = {"arch": str, "holdout": int, "dtype": str}


def _merge_train_config(args):
    """Defaults <- config file <- explicit flags; returns (TrainConfig, run)."""
    from .training import TrainConfig

    file_cfg = _read_kv_config(args.config) if args.config else {}
    values = {}
    run = {"arch": "default", "holdout": 0, "dtype": "float32"}
    for key, raw in file_cfg.items():
        if key in _TRAIN_KEYS:
            values[key] = _TRAIN_KEYS[key](raw)
        elif key == "loss_weights":
            values["loss_weights"] = tuple(float(x) for x in raw.split(","))
        elif key in _RUN_KEYS:
            run[key] = _RUN_KEYS[key](raw)
        else:
            raise ValueError(f"unknown config key {key!r} in {args.config}")
    for key in _TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if args.loss_weights is not None:
        values["loss_weights"] = tuple(
            float(x) for x in args.loss_weights.split(","))
    for key in _RUN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            run[key] = flag
    if run["dtype"] not in ("float32", "float64"):
        raise ValueError(f"dtype must be float32 or float64, got {run['dtype']}")
    if run["holdout"] < 0:
        raise ValueError("holdout must be nonnegative")
    return TrainConfig(**values), run


def _build_arch(name, n_mics, args):
    import dataclasses

    from .model import BeamformerConfig

    base = BeamformerConfig.less() if name == "less" else BeamformerConfig.default()
    changes = {}
    if n_mics != base.n_mics:
        changes = {"n_mics": n_mics, "n_pairs": n_mics - 1}
    if getattr(args, "no_freq_attention", False):
        changes["freq_attention"] = False
    if getattr(args, "gru_skip", False):
        changes["gru_skip"] = True
    if getattr(args, "causal", False):
        changes["causal_mhca"] = True
    return dataclasses.replace(base, **changes) if changes else base


def cmd_train(args):
    import numpy as np

    from . import autodiff as ad
    from .model import DualPathBeamformer
    from .roomsim import list_example_dirs, load_example
    from .training import train

    stft_cfg = parse_stft(args.stft)
    cfg, run = _merge_train_config(args)
    dirs = list_example_dirs(args.data)
    if not dirs:
        raise ValueError(f"no example directories under {args.data}")
    examples = [load_example(d, expect_rate=stft_cfg.sample_rate)
                for d in dirs]
    holdout = run["holdout"]
    if holdout >= len(examples):
        raise ValueError(f"holdout {holdout} leaves no training data "
                         f"({len(examples)} examples)")
    heldout = examples[len(examples) - holdout:] if holdout else None
    train_set = examples[:len(examples) - holdout] if holdout else examples

    n_mics = train_set[0].n_mics
    model_cfg = _build_arch(run["arch"], n_mics, args)
    dtype = np.dtype(run["dtype"])
    model = DualPathBeamformer(model_cfg, store=ad.ParamStore(dtype),
                               seed=cfg.seed)
    print(f"[dpbeam] train config: {json.dumps(cfg.to_dict(), sort_keys=True)}",
          file=sys.stderr)
    print(f"[dpbeam] model: arch={run['arch']} params={model.n_params} "
          f"train={len(train_set)} holdout={holdout}", file=sys.stderr)

    log_path = args.out + ".loss.csv"
    result = train(model, train_set, cfg, stft_cfg=stft_cfg, heldout=heldout,
                   ckpt_path=args.out, log_path=log_path,
                   sample_rate=stft_cfg.sample_rate)
    sidecar = {
        "model": model_cfg.to_dict(),
        "train": cfg.to_dict(),
        "dtype": run["dtype"],
        "arch": run["arch"],
        "stft": {"n_fft": stft_cfg.n_fft, "hop": stft_cfg.hop,
                 "window": stft_cfg.window,
                 "sample_rate": stft_cfg.sample_rate},
        "examples": len(train_set),
        "steps": result.steps,
        "skipped_steps": result.skipped_steps,
        "wall_time_s": result.wall_time_s,
    }
    from .container import atomic_write
    atomic_write(args.out + ".json",
                 (json.dumps(sidecar, indent=2) + "\n").encode())
    last = result.rows[-1]
    print(f"trained {result.steps} steps ({result.examples_seen} example "
          f"passes) in {result.wall_time_s:.1f} s; final loss {last['loss']:+.4f}")
    print(f"checkpoint -> {args.out}")
    print(f"loss curve -> {log_path}")
    if result.skipped_steps:
        print(f"skipped {result.skipped_steps} steps on non-finite gradients")
    if result.report is not None:
        print(result.report)
    return EXIT_OK


def cmd_enhance(args):
    import numpy as np

    from .container import save_tensor
    from .stft import pad_for_synthesis, stft
    from .training import si_sdr_db
    from .wavio import read_wav, write_wav

    stft_cfg = parse_stft(args.stft)
    model, _ = _load_model(args.model)
    _, data = read_wav(args.in_path, expect_rate=stft_cfg.sample_rate)
    mixture = np.atleast_2d(data)
    geom, doa = _geometry_and_doa(args.in_path, mixture.shape[0], args.doa)
    est, weights = model.enhance(mixture, doa, geom=geom, stft_cfg=stft_cfg)
    write_wav(args.out, est.astype(np.float32), stft_cfg.sample_rate)
    print(f"enhanced -> {args.out}")

    if args.dump_weights:
        save_tensor(args.dump_weights, weights.data.astype(np.complex64))
        print(f"weights {weights.data.shape} -> {args.dump_weights}")
    if args.dump_spec:
        est_spec = stft(pad_for_synthesis(est, stft_cfg), stft_cfg)
        dump_spectrogram(est_spec, args.dump_spec)
        print(f"spectrogram (dB) -> {args.dump_spec} and {args.dump_spec}.csv")

    target_path = os.path.join(os.path.dirname(os.path.abspath(args.in_path)),
                               "target.wav")
    if os.path.exists(target_path):
        _, target = read_wav(target_path, expect_rate=stft_cfg.sample_rate)
        print(f"input Si-SDR:  {si_sdr_db(mixture[0], target):+.2f} dB")
        print(f"output Si-SDR: {si_sdr_db(est, target):+.2f} dB")
    else:
        print("no target.wav beside the input; skipping Si-SDR report")
    return EXIT_OK


def cmd_eval(args):
    from .mvdr import oracle_enhance_waveform
    from .roomsim import list_example_dirs, load_example
    from .training import evaluate

    stft_cfg = parse_stft(args.stft)
    dirs = list_example_dirs(args.data)
    if not dirs:
        raise ValueError(f"no example directories under {args.data}")
    if args.limit is not None:
        if args.limit < 1:
            raise ValueError("--limit must be at least 1")
        dirs = dirs[:args.limit]
    examples = [load_example(d, expect_rate=stft_cfg.sample_rate)
                for d in dirs]

    param_count = None
    if args.method == "dptbf":
        if args.model is None:
            raise ValueError("--model is required for --method dptbf")
        model, _ = _load_model(args.model)
        param_count = model.n_params

        def enhance(ex):
            return model.enhance(ex.mixture, ex.mix.target_doa,
                                 geom=ex.room.geometry(), stft_cfg=stft_cfg)[0]
    elif args.method == "mvdr-oracle":
        def enhance(ex):
            return oracle_enhance_waveform(ex.mixture, ex.target_reverb_ref,
                                           stft_cfg=stft_cfg)
    else:
        def enhance(ex):
            return ex.mixture[0]

    report = evaluate(examples, enhance, param_count=param_count,
                      method=args.method)
    if args.report:
        report.save(args.report)
        print(f"report -> {args.report}")
    print(report)
    return EXIT_OK


def cmd_gradcheck(args):
    from .training import gradcheck_suite

    if args.max_elems < 1:
        raise ValueError("--max-elems must be at least 1")
    seed = 0 if args.seed is None else args.seed
    suite = gradcheck_suite(max_elems=args.max_elems, seed=seed)
    failures = 0
    for name, report in suite.items():
        status = "PASS" if report.passed else "FAIL"
        print(f"{name:24s} max_rel_err={report.max_rel_err:.3e}  {status}")
        failures += not report.passed
    if failures:
        print(f"gradcheck: {failures} block(s) FAILED (tol 1e-4)")
        return EXIT_VALIDATION
    print("gradcheck: all blocks PASS (tol 1e-4)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "cmd", None) is None:
            parser.print_usage(sys.stderr)
            print("dpbeam: a subcommand is required", file=sys.stderr)
            return EXIT_USAGE
        _set_threads(args.threads)
    except UsageError as exc:
        print(f"dpbeam: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _log_run(args)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"dpbeam: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, KeyError, RuntimeError) as exc:
        print(f"dpbeam: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
