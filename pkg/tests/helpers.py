"""Shared fixture builders for the test suite."""

import numpy as np

from dpbeam.features import ArrayGeometry
from dpbeam.roomsim import MixtureSpec, RoomSpec, render_mixture, synth_speech


def anechoic_two_source_example(seed, duration=2.0, sir_db=0.0, snr_db=30.0,
                                min_sep_deg=20.0):
    """Direct-path-only 2-source mixture with a known target direction.

    Returns (example, parts, room). The room walls never contribute
    (max_image_order=0), so the spatial structure is exactly two plane-ish
    waves plus a little white noise.
    """
    rng = np.random.default_rng([17, seed])
    sample_rate = 16000
    n = int(round(duration * sample_rate))
    dims = (6.0, 5.0, 3.0)
    center = np.array([3.0, 2.5, 1.5])
    mics = ArrayGeometry.default_linear(4).positions() + center

    radius = 1.5
    while True:
        az = rng.uniform(0.0, np.pi, size=2)
        if np.degrees(abs(az[0] - az[1])) >= min_sep_deg:
            break
    sources = [tuple(center + radius * np.array([np.cos(a), np.sin(a), 0.0]))
               for a in az]

    room = RoomSpec(dims=dims, rt60=0.3, source_positions=tuple(sources),
                    mic_positions=tuple(map(tuple, mics)), max_image_order=0)
    mix = MixtureSpec(sir_db=sir_db, snr_db=snr_db, seed=(17, seed),
                      duration=duration, target_doa=room.source_doa(0))
    dry = [synth_speech(rng, n, sample_rate) for _ in range(2)]
    noise = rng.standard_normal((4, n))
    example, parts = render_mixture(mix, room, dry, noise=noise,
                                    sample_rate=sample_rate, return_parts=True)
    return example, parts, room
