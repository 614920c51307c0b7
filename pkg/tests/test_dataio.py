"""Motion file format, normalization, windowing, and synthesis."""

import numpy as np
import pytest

from pms.dataio import (
    MotionSequence,
    SynthSpec,
    UnitWindow,
    compute_norm_stats,
    denormalize,
    make_windows,
    normalize_action,
    parse_mtf,
    synth_generate,
    write_mtf,
)
from pms.errors import DataError, DegenerateRangeError, ParseError


def _seq(frames, name="walk", fps=25.0):
    return MotionSequence(name=name, fps=fps, frames=np.asarray(frames, dtype=np.float64))


def _random_seq(rng, frames=12, joints=3, name="rand"):
    return _seq(rng.standard_normal((frames, joints, 3)) * rng.uniform(0.5, 200.0), name=name)


# ---- sequence container --------------------------------------------------------


def test_sequence_validates_shape_name_fps_and_values():
    good = np.zeros((2, 1, 3))
    with pytest.raises(DataError):
        MotionSequence("a", 25.0, np.zeros((2, 3)))
    with pytest.raises(DataError):
        MotionSequence("a", 25.0, np.zeros((0, 1, 3)))
    with pytest.raises(DataError):
        MotionSequence("a", 0.0, good)
    with pytest.raises(DataError):
        MotionSequence("two words", 25.0, good)
    with pytest.raises(DataError):
        MotionSequence("", 25.0, good)
    bad = good.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        MotionSequence("a", 25.0, bad)
    seq = MotionSequence("a", 25.0, good)
    assert seq.joints == 1 and seq.n_frames == 2


# ---- text round-trip -------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_write_parse_round_trip_is_bit_exact(seed):
    rng = np.random.default_rng([seed, 17])
    seq = _random_seq(rng, frames=int(rng.integers(1, 20)), joints=int(rng.integers(1, 6)))
    back = parse_mtf(write_mtf(seq))
    assert back.name == seq.name
    assert back.fps == seq.fps
    assert np.array_equal(back.frames, seq.frames)  # exact, not approximate


def test_write_mtf_header_and_layout():
    seq = _seq([[[1.0, 2.0, 3.0]], [[4.0, 5.0, 6.0]]], name="jump", fps=25.0)
    text = write_mtf(seq)
    lines = text.split("\n")
    assert lines[0] == "MTF1 joints=1 fps=25 name=jump"
    assert lines[1] == "1.0 2.0 3.0"
    assert lines[2] == "4.0 5.0 6.0"
    assert text.endswith("\n")


def test_parse_mtf_reports_line_numbers():
    with pytest.raises(ParseError, match="line 1"):
        parse_mtf("BOGUS joints=1 fps=25 name=x\n1 2 3\n")
    with pytest.raises(ParseError, match="line 2"):
        parse_mtf("MTF1 joints=1 fps=25 name=x\n1 2\n")
    with pytest.raises(ParseError, match="line 3"):
        parse_mtf("MTF1 joints=1 fps=25 name=x\n1 2 3\n1 2 oops\n")
    with pytest.raises(ParseError, match="line 2"):
        parse_mtf("MTF1 joints=1 fps=25 name=x\n1 2 inf\n")


def test_parse_mtf_rejects_structural_problems():
    with pytest.raises(ParseError):
        parse_mtf("")
    with pytest.raises(ParseError):
        parse_mtf("MTF1 joints=1 fps=25 name=x\n")  # no frames
    with pytest.raises(ParseError):
        parse_mtf("MTF1 joints=0 fps=25 name=x\n\n")
    with pytest.raises(ParseError):
        parse_mtf("MTF1 fps=25 joints=1 name=x\n1 2 3\n")  # field order is fixed
    with pytest.raises(ParseError):
        parse_mtf("MTF1 joints=one fps=25 name=x\n1 2 3\n")


def test_parse_mtf_skips_blank_lines():
    seq = parse_mtf("MTF1 joints=1 fps=25 name=x\n\n1 2 3\n\n4 5 6\n\n")
    assert seq.n_frames == 2


# ---- normalization ----------------------------------------------------------------


def test_normalize_extrema_map_to_exactly_plus_minus_one():
    rng = np.random.default_rng(3)
    seq = _random_seq(rng, frames=30, joints=4)
    out, _ = normalize_action(seq)
    for axis in range(3):
        vals = out.frames[:, :, axis]
        assert vals.max() == 1.0  # exact by construction
        assert vals.min() == -1.0
        assert np.all(vals <= 1.0) and np.all(vals >= -1.0)


def test_normalize_two_point_oracle():
    # {-1, +1} with extrema {0, 2} normalizes to {-1, 1}: mid 1, half range 1.
    seq = _seq([[[0.0, 0.0, 0.0]], [[2.0, 2.0, 2.0]]])
    out, stats = normalize_action(seq)
    np.testing.assert_array_equal(out.frames[0, 0], [-1.0, -1.0, -1.0])
    np.testing.assert_array_equal(out.frames[1, 0], [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(stats.mins(), [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(stats.maxs(), [2.0, 2.0, 2.0])


@pytest.mark.parametrize("seed", range(10))
def test_normalize_round_trip(seed):
    rng = np.random.default_rng([seed, 23])
    seq = _random_seq(rng, frames=25, joints=5)
    out, stats = normalize_action(seq)
    back = denormalize(out.frames, stats)
    np.testing.assert_allclose(back, seq.frames, rtol=0, atol=1e-9 * np.abs(seq.frames).max())


@pytest.mark.parametrize("seed", range(5))
def test_normalize_is_offset_and_scale_invariant(seed):
    rng = np.random.default_rng([seed, 29])
    seq = _random_seq(rng, frames=20, joints=3)
    a = rng.uniform(0.1, 10.0)
    c = rng.uniform(-100.0, 100.0)
    moved = _seq(seq.frames * a + c, name=seq.name)
    base, _ = normalize_action(seq)
    shifted, _ = normalize_action(moved)
    np.testing.assert_allclose(shifted.frames, base.frames, atol=1e-9)


def test_normalize_rejects_flat_axis():
    frames = np.random.default_rng(0).standard_normal((5, 2, 3))
    frames[:, :, 1] = 7.0
    with pytest.raises(DegenerateRangeError, match="axis y"):
        compute_norm_stats(_seq(frames))


# ---- windowing ---------------------------------------------------------------------


def test_make_windows_boundary_fit_yields_one_window():
    seq = _seq(np.arange(60 * 1 * 3, dtype=np.float64).reshape(60, 1, 3))
    windows = make_windows(seq, k=50, l=10, extended=30, stride=10)
    assert len(windows) == 1
    w = windows[0]
    assert w.start == 0
    assert w.observed.shape == (50, 1, 3)
    assert w.target.shape == (10, 1, 3)
    assert w.extended_future.shape == (0, 1, 3)


def test_make_windows_underfull_sequence_yields_none():
    seq = _seq(np.zeros((59, 1, 3)) + np.arange(59).reshape(59, 1, 1))
    assert make_windows(seq, k=50, l=10) == []


def test_make_windows_enumerates_all_starts():
    seq = _seq(np.arange(400 * 1 * 3, dtype=np.float64).reshape(400, 1, 3))
    windows = make_windows(seq, k=50, l=10, extended=30, stride=10)
    assert len(windows) == 35
    assert [w.start for w in windows] == list(range(0, 341, 10))
    # content slices line up with the source array
    w = windows[3]
    np.testing.assert_array_equal(w.observed, seq.frames[30:80])
    np.testing.assert_array_equal(w.target, seq.frames[80:90])
    np.testing.assert_array_equal(w.extended_future, seq.frames[90:120])
    # the last window's extended future is clipped by the sequence end
    assert windows[-1].extended_future.shape[0] == 0
    assert windows[31].extended_future.shape[0] == 30
    assert windows[33].extended_future.shape[0] == 10


@pytest.mark.parametrize("seed", range(20))
def test_make_windows_count_matches_enumeration_oracle(seed):
    rng = np.random.default_rng([seed, 31])
    f = int(rng.integers(1, 200))
    k = int(rng.integers(1, 60))
    l = int(rng.integers(1, 20))
    stride = int(rng.integers(1, 25))
    ext = int(rng.integers(0, 40))
    seq = _seq(np.zeros((f, 1, 3)) + np.linspace(0, 1, f).reshape(f, 1, 1))
    windows = make_windows(seq, k=k, l=l, extended=ext, stride=stride)
    expected = [s for s in range(0, f + 1, stride) if s + k + l <= f]
    assert [w.start for w in windows] == expected
    for w in windows:
        assert w.extended_future.shape[0] == min(ext, f - w.start - k - l)


def test_make_windows_validates_parameters():
    seq = _seq(np.zeros((10, 1, 3)) + np.arange(10).reshape(10, 1, 1))
    for kwargs in ({"k": 0}, {"l": 0}, {"stride": 0}, {"extended": -1}):
        with pytest.raises(DataError):
            make_windows(seq, **kwargs)


# ---- synthesis ----------------------------------------------------------------------


def test_synth_same_seed_is_bit_identical():
    spec = SynthSpec(joints=4, frames=100, seed=9, name="s")
    a = synth_generate(spec)
    b = synth_generate(spec)
    assert np.array_equal(a.frames, b.frames)


def test_synth_different_seeds_differ():
    a = synth_generate(SynthSpec(seed=1))
    b = synth_generate(SynthSpec(seed=2))
    assert not np.array_equal(a.frames, b.frames)


def test_synth_noise_free_single_tone_is_a_sampled_sinusoid():
    spec = SynthSpec(joints=1, frames=200, sinusoids=1, noise_std=0.0, seed=4, name="tone")
    seq = synth_generate(spec)
    track = seq.frames[:, 0, 0]
    # a pure sinusoid satisfies x[t+1] + x[t-1] = 2 cos(w) x[t]
    t = np.arange(200) / spec.fps
    ratio = (track[2:] + track[:-2])
    # solve for the implied frequency from the recurrence and check consistency
    mask = np.abs(track[1:-1]) > 1e-3
    implied = ratio[mask] / (2.0 * track[1:-1][mask])
    assert implied.std() < 1e-8
    w = np.arccos(np.clip(implied.mean(), -1, 1)) * spec.fps / (2 * np.pi)
    assert spec.freq_min - 1e-9 <= w <= spec.freq_max + 1e-9


@pytest.mark.parametrize("seed", range(200))
def test_synth_coordinates_respect_amplitude_noise_bound(seed):
    rng = np.random.default_rng([seed, 37])
    spec = SynthSpec(
        joints=int(rng.integers(1, 4)),
        frames=int(rng.integers(2, 60)),
        sinusoids=int(rng.integers(1, 5)),
        freq_min=float(rng.uniform(0.05, 0.5)),
        freq_max=float(rng.uniform(0.5, 2.0)),
        amplitude=float(rng.uniform(0.1, 5.0)),
        noise_std=float(rng.uniform(0.0, 0.5)),
        seed=seed,
    )
    seq = synth_generate(spec)
    bound = spec.sinusoids * spec.amplitude + 6.0 * spec.noise_std
    assert np.all(np.abs(seq.frames) <= bound)


def test_synth_trend_break_switches_regime_mid_sequence():
    # The first axis draws its parameters before any redraw happens, so its
    # pre-break samples must match the unbroken sequence and its tail must not.
    base = SynthSpec(joints=2, frames=120, seed=6, noise_std=0.0, name="tb")
    plain = synth_generate(base)
    broken = synth_generate(SynthSpec(**{**base.__dict__, "trend_break": 60}))
    np.testing.assert_array_equal(broken.frames[:60, 0, 0], plain.frames[:60, 0, 0])
    assert not np.array_equal(broken.frames[60:, 0, 0], plain.frames[60:, 0, 0])


def test_synth_spec_validation():
    with pytest.raises(DataError):
        SynthSpec(joints=0)
    with pytest.raises(DataError):
        SynthSpec(freq_min=0.0)
    with pytest.raises(DataError):
        SynthSpec(freq_min=2.0, freq_max=1.0)
    with pytest.raises(DataError):
        SynthSpec(freq_max=20.0, fps=25.0)  # at or above Nyquist
    with pytest.raises(DataError):
        SynthSpec(noise_std=-0.1)
    with pytest.raises(DataError):
        SynthSpec(trend_break=0)
    with pytest.raises(DataError):
        SynthSpec(trend_break=200, frames=200)


def test_unit_window_fields_are_plain_views():
    seq = _seq(np.arange(70 * 3, dtype=np.float64).reshape(70, 1, 3))
    w = make_windows(seq, k=50, l=10, extended=30, stride=10)[0]
    assert isinstance(w, UnitWindow)
    assert w.action == seq.name
    np.testing.assert_array_equal(w.extended_future, seq.frames[60:70])
