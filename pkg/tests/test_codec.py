import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from oracles import gray_by_reflection, popcount
from slmetro.codec import (
    GRAY_BIT,
    GRAY_COMPLEMENT,
    STRIPE_SHIFT,
    CodecConfig,
    InvalidConfig,
    PatternStack,
    StackMismatch,
    binarize,
    decode,
    generate_patterns,
    gray_to_int,
    int_to_gray,
    read_stack,
    write_stack,
)

CFG = CodecConfig()


def sample_columns(stack: PatternStack, cols, scale=1.0, offset=0.0):
    """Capture of the first projector row, linearly interpolated at fractional columns.

    Frames are 1 x len(cols); intensity = offset + scale * pattern.
    """
    cols = np.asarray(cols, float)
    i0 = np.clip(np.floor(cols).astype(int), 0, stack.width - 1)
    i1 = np.clip(i0 + 1, 0, stack.width - 1)
    f = cols - i0
    frames = []
    for fr in stack.frames:
        row = fr[0].astype(float)
        frames.append((offset + scale * (row[i0] + f * (row[i1] - row[i0])))[None, :])
    return PatternStack(len(cols), 1, frames, stack.meta)


def test_gray_examples():
    assert int_to_gray(0) == 0
    assert int_to_gray(2) == 3
    assert int_to_gray(79) == 79 ^ 39
    assert gray_to_int(3) == 2


def test_gray_matches_reflection_construction():
    ref = np.asarray(gray_by_reflection(12))
    assert np.array_equal(int_to_gray(np.arange(4096)), ref)


def test_gray_adjacent_codes_differ_by_one_bit():
    n = np.arange(1 << 20, dtype=np.int64)
    x = int_to_gray(n[1:]) ^ int_to_gray(n[:-1])
    # single bit set <=> power of two
    assert np.all((x > 0) & ((x & (x - 1)) == 0))


def test_gray_round_trip_array():
    n = np.arange(1 << 12, dtype=np.int64)
    assert np.array_equal(gray_to_int(int_to_gray(n)), n)


@given(st.integers(0, 2**40))
def test_gray_round_trip_scalar(n):
    assert gray_to_int(int_to_gray(n)) == n
    assert popcount(int_to_gray(n) ^ int_to_gray(n + 1)) == 1


def test_default_stack_layout():
    s = generate_patterns()
    assert len(s) == 18
    assert CFG.n_bits == 7 and CFG.n_stripes == 80
    roles = [r for r, _ in s.meta]
    assert roles == [GRAY_BIT] * 7 + [GRAY_COMPLEMENT] * 7 + [STRIPE_SHIFT] * 4
    for f in s.frames:
        assert f.shape == (720, 1280) and f.dtype == np.uint8
        # column patterns: every row identical
        assert np.array_equal(f, np.broadcast_to(f[0], f.shape))


def test_complements_are_exact_inverses():
    s = generate_patterns()
    for k in range(7):
        assert np.array_equal(s.frames[k].astype(int) + s.frames[7 + k], np.full((720, 1280), 255))


def test_gray_frames_encode_stripe_index():
    s = generate_patterns()
    bits = np.stack([s.frames[k][0] > 127 for k in range(7)])
    g = np.zeros(1280, dtype=np.int64)
    for b in bits:
        g = (g << 1) | b
    assert np.array_equal(gray_to_int(g), np.arange(1280) // 16)


def test_msb_frame_run_lengths():
    row = generate_patterns().frames[0][0]
    edges = np.flatnonzero(np.diff(row.astype(int)))
    # MSB of a 7-bit Gray code flips once at stripe 64 (column 1024)
    assert edges.tolist() == [1023]
    lsb = generate_patterns().frames[6][0]
    runs = np.diff(np.r_[-1, np.flatnonzero(np.diff(lsb.astype(int))), 1279])
    # LSB runs are two stripes wide except the first
    assert runs[0] == 16 and np.all(runs[1:-1] == 32)


def test_stripe_frames_are_shifted_cosines():
    s = generate_patterns()
    c = np.arange(1280)
    for i in range(4):
        want = 127.5 * (1 + np.cos(2 * np.pi * (c - 4 * i) / 16))
        assert np.max(np.abs(s.frames[14 + i][0] - want)) <= 0.5 + 1e-9


@pytest.mark.parametrize(
    "kwargs",
    [dict(stripe_period=2), dict(stripe_period=0), dict(proj_width=0), dict(n_shifts=2), dict(stripe_period=4.5),
     dict(proj_width=8, stripe_period=16), dict(contrast_threshold=-1.0)],
)
def test_invalid_config(kwargs):
    with pytest.raises(InvalidConfig):
        CodecConfig(**kwargs)


def test_unknown_config_field():
    with pytest.raises(InvalidConfig):
        CodecConfig.from_dict({"stripe_period": 16, "colour": 1})


def test_binarize_examples():
    f = np.array([200.0, 100.0, 52.0, 50.0])
    c = np.array([100.0, 200.0, 50.0, 52.0])
    bit, conf = binarize(f, c, threshold=5)
    assert bit.tolist() == [True, False, True, False]
    assert conf.tolist() == [True, True, False, False]
    with pytest.raises(StackMismatch):
        binarize(np.zeros(3), np.zeros(4))


def test_decode_integer_columns_exact():
    s = generate_patterns()
    cm = decode(sample_columns(s, np.arange(1280)), CFG)
    assert cm.valid.all()
    assert np.array_equal(cm.proj_col[0], np.arange(1280.0))
    assert np.array_equal(cm.stripe_index[0], np.arange(1280) // 16)


def test_decode_fractional_columns(rng):
    s = generate_patterns()
    cols = np.sort(rng.uniform(0, 1279, 20000))
    cm = decode(sample_columns(s, cols, scale=0.6, offset=30.0), CFG)
    v = cm.valid[0]
    # samples straddling a Gray edge by ~0.5 px lose complement contrast
    assert v.mean() > 0.99
    assert np.max(np.abs(cm.proj_col[0, v] - cols[v])) < 0.05
    assert np.all(np.diff(cm.proj_col[0, v]) >= -1e-9)


@given(st.floats(0.0, 1279.0), st.floats(0.2, 1.0), st.floats(0.0, 40.0))
def test_decode_refines_within_one_period(col, scale, offset):
    s = generate_patterns()
    cm = decode(sample_columns(s, [col], scale, offset), CFG)
    assume(cm.valid[0, 0])
    assert cm.stripe_index[0, 0] == int(cm.proj_col[0, 0] // 16)
    assert abs(cm.proj_col[0, 0] - col) < 0.05


def test_all_black_stack_is_invalid():
    s = generate_patterns(64, 4, 16, 4)
    black = PatternStack(64, 4, [np.zeros((4, 64)) for _ in s.frames], s.meta)
    cm = decode(black, CodecConfig(64, 4, 16, 4))
    assert not cm.valid.any()
    assert np.isnan(cm.proj_col).all()


def test_low_contrast_pixels_rejected():
    s = generate_patterns()
    dim = sample_columns(s, np.arange(0, 1280, 7.3), scale=0.01)
    assert not decode(dim, CFG).valid.any()


def test_missing_frame_rejected():
    s = generate_patterns(64, 4, 16, 4)
    with pytest.raises(StackMismatch):
        decode(s.without(3), CodecConfig(64, 4, 16, 4))


def test_reordered_frames_rejected():
    s = generate_patterns(64, 4, 16, 4)
    meta = list(s.meta)
    meta[0], meta[1] = meta[1], meta[0]
    with pytest.raises(StackMismatch):
        decode(PatternStack(64, 4, s.frames, meta), CodecConfig(64, 4, 16, 4))


def test_stack_shape_checks():
    with pytest.raises(StackMismatch):
        PatternStack(4, 2, [np.zeros((2, 4))], [])
    with pytest.raises(StackMismatch):
        PatternStack(4, 2, [np.zeros((3, 4))], [(GRAY_BIT, 0)])


@pytest.mark.parametrize("period,width", [(8, 640), (16, 1000), (32, 1280)])
def test_other_geometries_decode(period, width):
    cfg = CodecConfig(width, 8, period, 4)
    s = generate_patterns(width, 8, period, 4)
    cm = decode(sample_columns(s, np.arange(width)), cfg)
    assert cm.valid.all()
    assert np.max(np.abs(cm.proj_col[0] - np.arange(width))) < 0.05


def test_stack_io_round_trip(tmp_path):
    s = generate_patterns(64, 8, 16, 4)
    cfg = CodecConfig(64, 8, 16, 4)
    write_stack(tmp_path / "p", s, cfg)
    back, cfg2, doc = read_stack(tmp_path / "p", as_float=False)
    assert cfg2 == cfg and back.meta == s.meta
    for a, b in zip(s.frames, back.frames):
        assert np.array_equal(a, b)


def test_float_stack_io_quantizes(tmp_path, rng):
    s = generate_patterns(64, 8, 16, 4)
    frames = [f + rng.uniform(0, 0.4, f.shape) for f in s.frames]
    cap = PatternStack(64, 8, frames, s.meta)
    cfg = CodecConfig(64, 8, 16, 4)
    write_stack(tmp_path / "c", cap, cfg, bits=16)
    back, _, _ = read_stack(tmp_path / "c")
    for a, b in zip(frames, back.frames):
        assert np.max(np.abs(np.clip(a, 0, 255) - b)) <= 0.5 * 255 / 65535 + 1e-9


def test_read_stack_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_stack(tmp_path)
