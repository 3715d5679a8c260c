import numpy as np
import pytest

from dpbeam.roomsim import (
    DatasetConfig,
    MixtureSpec,
    RoomSpec,
    TrainingExample,
    default_image_order,
    image_sources,
    render_mixture,
    sabine_absorption,
    sample_dataset,
    sample_example,
    simulate_rir,
    spatialize,
    synth_noise,
    synth_speech,
)
from oracles import schroeder_rt60

FS = 16000


def mid_room(rt60=0.3, order=None):
    return RoomSpec(dims=(5.0, 4.0, 2.5), rt60=rt60,
                    source_positions=((3.5, 2.8, 1.3),),
                    mic_positions=((1.5, 1.5, 1.2), (1.53, 1.5, 1.2),
                                   (1.56, 1.5, 1.2), (1.59, 1.5, 1.2)),
                    max_image_order=order)


class TestSabine:
    def test_known_value(self):
        # 5x4x2.5 room: V=50, S=85; rt60=0.3 -> alpha = 0.161*50/(85*0.3)
        alpha = sabine_absorption((5.0, 4.0, 2.5), 0.3)
        np.testing.assert_allclose(alpha, 0.161 * 50 / (85 * 0.3), rtol=1e-12)

    def test_impossible_rt60_refused(self):
        with pytest.raises(ValueError, match="absorption"):
            sabine_absorption((8.0, 8.0, 2.5), 0.05)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            sabine_absorption((0.0, 4.0, 2.5), 0.3)
        with pytest.raises(ValueError):
            sabine_absorption((5.0, 4.0, 2.5), -0.1)

    def test_order_default_capped(self):
        assert default_image_order((5.0, 4.0, 2.5), 0.3) == 30
        assert default_image_order((8.0, 8.0, 2.5), 0.1) == 14


class TestRoomSpec:
    def test_positions_must_be_inside(self):
        with pytest.raises(ValueError, match="inside"):
            RoomSpec((5, 4, 2.5), 0.3, ((6.0, 2.0, 1.0),), ((1, 1, 1),))
        with pytest.raises(ValueError, match="inside"):
            RoomSpec((5, 4, 2.5), 0.3, ((2.0, 2.0, 1.0),), ((1, 1, 0.0),))

    def test_close_sources_rejected(self):
        # both sources right of the array at bearings about 2 degrees apart
        with pytest.raises(ValueError, match="degrees"):
            RoomSpec((5, 4, 2.5), 0.3,
                     ((3.0, 2.0, 1.2), (4.0, 2.1, 1.2)),
                     ((1, 2, 1.2), (1.03, 2, 1.2)))

    def test_doa_of_broadside_source(self):
        room = RoomSpec((5, 4, 2.5), 0.3, ((1.5, 3.0, 1.2),),
                        ((1.47, 1.5, 1.2), (1.5, 1.5, 1.2), (1.53, 1.5, 1.2)))
        np.testing.assert_allclose(np.rad2deg(room.source_doa(0)), 90.0, atol=1e-9)

    def test_doa_endfire(self):
        room = RoomSpec((5, 4, 2.5), 0.3, ((3.0, 1.5, 1.2),),
                        ((1.47, 1.5, 1.2), (1.5, 1.5, 1.2), (1.53, 1.5, 1.2)))
        np.testing.assert_allclose(np.rad2deg(room.source_doa(0)), 0.0, atol=1e-9)


class TestImageSources:
    def test_order_zero_is_just_the_source(self):
        room = mid_room(order=0)
        pos, hits = image_sources(room, 0)
        assert pos.shape == (1, 3)
        np.testing.assert_allclose(pos[0], (3.5, 2.8, 1.3))
        assert hits[0] == 0

    def test_first_order_images_mirror_once(self):
        room = mid_room(order=1)
        pos, hits = image_sources(room, 0)
        assert len(pos) == 7  # source + one mirror per wall
        assert np.sum(hits == 0) == 1
        assert np.sum(hits == 1) == 6
        # mirror across x=0 negates x; across x=Lx reflects to 2Lx - x
        as_set = {tuple(np.round(p, 9)) for p in pos}
        assert (-3.5, 2.8, 1.3) in as_set
        assert (2 * 5.0 - 3.5, 2.8, 1.3) in as_set
        assert (3.5, -2.8, 1.3) in as_set
        assert (3.5, 2 * 4.0 - 2.8, 1.3) in as_set

    def test_count_matches_l1_ball(self):
        room = mid_room(order=3)
        pos, hits = image_sources(room, 0)
        # lattice points with |nx|+|ny|+|nz| <= 3
        expect = sum(1 for a in range(-3, 4) for b in range(-3, 4)
                     for c in range(-3, 4) if abs(a) + abs(b) + abs(c) <= 3)
        assert len(pos) == expect
        assert hits.max() == 3


class TestRir:
    def test_anechoic_single_tap(self):
        # distance chosen to be exactly 50 samples of travel
        dist = 343.0 * 50 / FS
        room = RoomSpec((6, 4, 2.5), 0.3, ((2.0 + dist, 2.0, 1.2),),
                        ((2.0, 2.0, 1.2),), max_image_order=0)
        h = simulate_rir(room, 0, 0, FS)
        expect = 1.0 / (4 * np.pi * dist)
        np.testing.assert_allclose(h[50], expect, rtol=1e-9)
        rest = np.delete(h, 50)
        assert np.max(np.abs(rest)) < 1e-12 * expect

    def test_direct_path_arrival_time(self):
        # order 0 leaves only the direct path; its peak tap must sit within
        # half a sample of distance / c (fractional delay included)
        room = mid_room(order=0)
        h = simulate_rir(room, 0, 0, FS)
        dist = np.linalg.norm(np.array((3.5, 2.8, 1.3)) - np.array((1.5, 1.5, 1.2)))
        expect = dist / 343.0 * FS
        peak = np.argmax(np.abs(h))
        assert abs(peak - expect) <= 0.5

    def test_onset_in_reverberant_rir_is_the_direct_path(self):
        # argmax can land on coinciding reflections, but the first strong
        # tap is the direct arrival
        room = mid_room()
        h = simulate_rir(room, 0, 0, FS)
        dist = np.linalg.norm(np.array((3.5, 2.8, 1.3)) - np.array((1.5, 1.5, 1.2)))
        expect = dist / 343.0 * FS
        onset = np.argmax(np.abs(h) > 0.5 * np.max(np.abs(h)))
        assert abs(onset - expect) <= 1.0

    def test_schroeder_rt60_within_20_percent(self):
        room = mid_room(rt60=0.3)
        h = simulate_rir(room, 0, 0, FS)
        measured = schroeder_rt60(h, FS)
        assert 0.8 * 0.3 <= measured <= 1.2 * 0.3, f"measured {measured:.3f}s"

    def test_energy_decays(self):
        room = mid_room(rt60=0.25)
        h = simulate_rir(room, 0, 0, FS)
        head = np.sum(h[:int(0.05 * FS)] ** 2)
        tail_range = h[int(0.25 * FS):int(0.35 * FS)]
        tail = np.sum(tail_range ** 2)
        assert tail < 1e-3 * head

    def test_mic_on_source_rejected(self):
        room = RoomSpec((5, 4, 2.5), 0.3, ((1.5, 1.5, 1.2),),
                        ((1.5, 1.5, 1.2),), max_image_order=0)
        with pytest.raises(ValueError, match="coincides"):
            simulate_rir(room, 0, 0, FS)

    def test_spatialize_is_linear(self):
        room = mid_room(order=6)
        rng = np.random.default_rng(0)
        rirs = np.stack([simulate_rir(room, 0, m, FS) for m in range(4)])
        a = rng.standard_normal(4000)
        b = rng.standard_normal(4000)
        lhs = spatialize(2 * a - b, rirs)
        rhs = 2 * spatialize(a, rirs) - spatialize(b, rirs)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestRender:
    def setup_method(self):
        self.room = RoomSpec((5, 4, 2.5), 0.3,
                             ((3.5, 2.8, 1.3), (2.0, 3.2, 1.5)),
                             ((1.5, 1.5, 1.2), (1.53, 1.5, 1.2),
                              (1.56, 1.5, 1.2), (1.59, 1.5, 1.2)),
                             max_image_order=8)
        rng = np.random.default_rng(1)
        self.dry = [synth_speech(rng, FS), synth_speech(rng, FS)]
        self.noise = synth_noise(rng, (4, FS))

    def test_sir_exact_at_reference(self):
        mix = MixtureSpec(sir_db=3.0, snr_db=10.0, seed=(0, 0), duration=1.0)
        _, parts = render_mixture(mix, self.room, self.dry, self.noise, FS,
                                  return_parts=True)
        p_t = np.mean(parts["target"][0] ** 2)
        p_i = np.mean(parts["interference"][0] ** 2)
        np.testing.assert_allclose(10 * np.log10(p_t / p_i), 3.0, atol=1e-10)

    def test_snr_exact_at_reference(self):
        mix = MixtureSpec(sir_db=0.0, snr_db=7.5, seed=(0, 0), duration=1.0)
        _, parts = render_mixture(mix, self.room, self.dry, self.noise, FS,
                                  return_parts=True)
        p_t = np.mean(parts["target"][0] ** 2)
        p_n = np.mean(parts["noise"][0] ** 2)
        np.testing.assert_allclose(10 * np.log10(p_t / p_n), 7.5, atol=0.01)

    def test_mixture_is_exact_sum(self):
        mix = MixtureSpec(sir_db=-2.0, snr_db=5.0, seed=(0, 0), duration=1.0)
        ex, parts = render_mixture(mix, self.room, self.dry, self.noise, FS,
                                   return_parts=True)
        total = parts["target"] + parts["interference"] + parts["noise"]
        assert np.max(np.abs(ex.mixture - total)) < 1e-12

    def test_clean_render_equals_target_image(self):
        mix = MixtureSpec(sir_db=0.0, snr_db=0.0, seed=(0, 0), duration=1.0)
        single = RoomSpec(self.room.dims, self.room.rt60,
                          (self.room.source_positions[0],),
                          self.room.mic_positions, max_image_order=8)
        ex = render_mixture(mix, single, [self.dry[0]], None, FS)
        rirs = np.stack([simulate_rir(single, 0, m, FS) for m in range(4)])
        img = spatialize(self.dry[0][:FS], rirs, FS)
        np.testing.assert_array_equal(ex.mixture, img)
        np.testing.assert_array_equal(ex.target_reverb_ref, img[0])

    def test_target_label_is_reference_channel_image(self):
        mix = MixtureSpec(sir_db=1.0, snr_db=12.0, seed=(0, 0), duration=1.0)
        ex, parts = render_mixture(mix, self.room, self.dry, self.noise, FS,
                                   return_parts=True)
        np.testing.assert_array_equal(ex.target_reverb_ref, parts["target"][0])

    def test_silent_source_rejected(self):
        mix = MixtureSpec(sir_db=0.0, snr_db=0.0, seed=(0, 0), duration=1.0)
        with pytest.raises(ValueError, match="zero power"):
            render_mixture(mix, self.room, [np.zeros(FS), self.dry[1]],
                           self.noise, FS)

    def test_short_source_rejected(self):
        mix = MixtureSpec(sir_db=0.0, snr_db=0.0, seed=(0, 0), duration=1.0)
        with pytest.raises(ValueError, match="shorter"):
            render_mixture(mix, self.room, [self.dry[0][:100], self.dry[1]],
                           self.noise, FS)


class TestSynthSignals:
    def test_speech_has_pauses_and_unit_rms(self):
        rng = np.random.default_rng(2)
        x = synth_speech(rng, 4 * FS)
        np.testing.assert_allclose(np.sqrt(np.mean(x ** 2)), 1.0, rtol=1e-9)
        # frame energies should swing hard: quiet fifth well below loud fifth
        frames = x[:4 * FS].reshape(-1, 1600)
        energies = np.sort(np.mean(frames ** 2, axis=1))
        n = len(energies)
        assert np.mean(energies[:n // 5]) < 0.1 * np.mean(energies[-n // 5:])

    def test_noise_kinds(self):
        rng = np.random.default_rng(3)
        white = synth_noise(rng, (2, FS))
        np.testing.assert_allclose(np.mean(white ** 2, axis=-1), 1.0, rtol=1e-9)
        pink = synth_noise(rng, (FS,), kind="pink")
        # pink tilts down with frequency: compare low vs high band energy
        spec = np.abs(np.fft.rfft(pink)) ** 2
        f = np.fft.rfftfreq(FS, 1 / FS)
        low = spec[(f > 50) & (f < 400)].mean()
        high = spec[(f > 4000) & (f < 7000)].mean()
        assert low > 10 * high
        with pytest.raises(ValueError):
            synth_noise(rng, (10,), kind="brown")


@pytest.mark.slow
class TestSampling:
    def test_same_seed_is_bitwise_identical(self):
        cfg = DatasetConfig(duration=0.5)
        a = sample_example(123, 0, cfg)
        b = sample_example(123, 0, cfg)
        np.testing.assert_array_equal(a.mixture, b.mixture)
        np.testing.assert_array_equal(a.target_reverb_ref, b.target_reverb_ref)
        assert a.room == b.room
        assert a.mix == b.mix

    def test_different_index_differs(self):
        cfg = DatasetConfig(duration=0.5)
        a = sample_example(123, 0, cfg)
        b = sample_example(123, 1, cfg)
        assert not np.array_equal(a.mixture, b.mixture)

    def test_dataset_respects_separation_and_ranges(self):
        cfg = DatasetConfig(duration=0.5)
        examples = sample_dataset(8, 7, cfg)
        for ex in examples:
            assert np.rad2deg(ex.room.source_separation()) >= 5.0 - 1e-9
            assert -6.0 <= ex.mix.sir_db <= 6.0
            assert -5.0 <= ex.mix.snr_db <= 20.0
            assert 0.1 <= ex.room.rt60 <= 0.6
            dims = np.asarray(ex.room.dims)
            assert np.all(dims >= (3.0, 3.0, 1.5)) and np.all(dims <= (8, 8, 2.5))
            assert 0.0 <= ex.mix.target_doa <= np.pi
            assert ex.mixture.shape == (4, int(0.5 * FS))

    def test_metadata_spans_ranges(self):
        # metadata-only sampling is cheap; check empirical min/max per range
        cfg = DatasetConfig(duration=0.5)
        from dpbeam.roomsim import sample_metadata
        rooms, mixes = zip(*(sample_metadata(5, i, cfg) for i in range(2000)))
        rt60s = np.array([r.rt60 for r in rooms])
        sirs = np.array([m.sir_db for m in mixes])
        snrs = np.array([m.snr_db for m in mixes])

        def spans(vals, lo, hi, frac=0.05):
            width = hi - lo
            return vals.min() <= lo + frac * width and vals.max() >= hi - frac * width

        assert spans(rt60s, 0.1, 0.6)
        assert spans(sirs, -6, 6)
        assert spans(snrs, -5, 20)
        dims = np.array([r.dims for r in rooms])
        for axis, (lo, hi) in enumerate(((3, 8), (3, 8), (1.5, 2.5))):
            assert spans(dims[:, axis], lo, hi)


class TestExampleIO:
    def test_save_load_round_trip(self, tmp_path):
        cfg = DatasetConfig(duration=0.5)
        ex = sample_example(9, 0, cfg)
        from dpbeam.roomsim import list_example_dirs, load_example, save_example
        d = tmp_path / "ex0000"
        save_example(d, ex)
        assert sorted(p.name for p in d.iterdir()) == [
            "meta.json", "mixture.wav", "target.wav"]
        back = load_example(d)
        assert back.room == ex.room
        np.testing.assert_allclose(back.mix.target_doa, ex.mix.target_doa,
                                   atol=1e-12)
        # wavs are float32 on disk
        np.testing.assert_allclose(back.mixture, ex.mixture, atol=1e-6)
        assert list_example_dirs(tmp_path) == [str(d)]
