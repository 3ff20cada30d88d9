import numpy as np
import pytest

from dermseg import postprocess as pp
from dermseg.errors import ContractError, ShapeError

from oracles import bicubic_1d_oracle, erode_set_oracle, open_set_oracle


# --- probability byte map ---------------------------------------------------


def test_bytemap_equal_logits_is_128():
    logits = np.zeros((2, 3, 3), dtype=np.float32)
    out = pp.prob_to_bytemap(logits)
    assert (out == 128).all()  # round-half-up of 127.5


def test_bytemap_saturated():
    logits = np.zeros((2, 2, 2), dtype=np.float32)
    logits[1] = 20.0
    assert (pp.prob_to_bytemap(logits) == 255).all()
    logits[1] = -20.0
    assert (pp.prob_to_bytemap(logits) == 0).all()


def test_bytemap_hand_softmax_value():
    # logit pair (0, ln 3): p_fg = 3/4, byte = round(191.25) = 191
    logits = np.zeros((2, 1, 1), dtype=np.float32)
    logits[1] = np.log(3.0)
    assert pp.prob_to_bytemap(logits)[0, 0] == 191


def test_bytemap_rejects_bad_channels():
    with pytest.raises(ShapeError):
        pp.prob_to_bytemap(np.zeros((3, 2, 2), dtype=np.float32))


# --- bicubic ----------------------------------------------------------------


def test_bicubic_identity():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (6, 9)).astype(np.uint8)
    assert np.array_equal(pp.resize_bicubic(img, (6, 9)), img)


def test_bicubic_constant_exact():
    img = np.full((5, 7), 93, dtype=np.uint8)
    out = pp.resize_bicubic(img, (31, 17))
    assert np.array_equal(out, np.full((31, 17), 93, dtype=np.uint8))


def test_bicubic_1d_slice_matches_kernel_oracle():
    line = np.array([[0, 0, 255, 255]], dtype=np.uint8)
    out = pp.resize_bicubic(line, (1, 8))[0]
    want = bicubic_1d_oracle([0, 0, 255, 255], 8)
    assert np.abs(out.astype(int) - np.array(want)).max() <= 1


def test_bicubic_2d_random_within_byte_of_separable_oracle():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (4, 5)).astype(np.uint8)
    out = pp.resize_bicubic(img, (9, 11))
    # separable scalar oracle: rows then columns in float
    from oracles import cubic_kernel

    def interp_axis(vals, n_out):
        n_in = len(vals)
        res = []
        for j in range(n_out):
            s = (j + 0.5) * (n_in / n_out) - 0.5
            lo = int(np.floor(s))
            acc = 0.0
            for o in (-1, 0, 1, 2):
                idx = min(max(lo + o, 0), n_in - 1)
                acc += float(vals[idx]) * cubic_kernel(s - (lo + o))
            res.append(acc)
        return res

    rows = np.array([interp_axis(img[:, j].astype(float), 9)
                     for j in range(5)]).T
    full = np.array([interp_axis(rows[i], 11) for i in range(9)])
    want = np.floor(np.clip(full, 0, 255) + 0.5).astype(int)
    assert np.abs(out.astype(int) - want).max() <= 1


# --- threshold --------------------------------------------------------------


def test_binarize_boundary_at_128():
    assert pp.binarize(np.array([[127, 128, 129]]), 128).tolist() == [[0, 1, 1]]


def test_binarize_zeros_and_threshold_zero():
    m = np.zeros((3, 3), dtype=np.uint8)
    assert not pp.binarize(m, 128).any()
    assert pp.binarize(m, 0).all()


def test_binarize_monotone_in_threshold():
    rng = np.random.default_rng(2)
    bytemap = rng.integers(0, 256, (12, 12))
    prev = pp.binarize(bytemap, 0)
    for t in range(0, 256, 17):
        cur = pp.binarize(bytemap, t)
        assert not (cur & ~prev).any()  # raising t never adds pixels
        prev = cur


# --- morphology -------------------------------------------------------------


def test_opening_removes_isolated_pixel():
    m = np.zeros((7, 7), dtype=np.uint8)
    m[3, 3] = 1
    assert not pp.morph_open(m).any()


def test_opening_of_solid_block_is_cross():
    m = np.zeros((7, 7), dtype=np.uint8)
    m[2:5, 2:5] = 1
    want = np.zeros((7, 7), dtype=np.uint8)
    want[3, 2:5] = 1
    want[2:5, 3] = 1
    assert np.array_equal(pp.morph_open(m), want)


def test_opening_idempotent():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = (rng.random((15, 15)) < 0.45).astype(np.uint8)
        once = pp.morph_open(m)
        assert np.array_equal(pp.morph_open(once), once)


def test_opening_matches_set_oracle_random():
    rng = np.random.default_rng(4)
    for _ in range(50):
        m = (rng.random((10, 12)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        assert np.array_equal(pp.morph_open(m), open_set_oracle(m))


def test_opening_anti_extensive_and_monotone():
    rng = np.random.default_rng(5)
    for _ in range(30):
        m = (rng.random((12, 12)) < 0.5).astype(np.uint8)
        opened = pp.morph_open(m)
        assert not (opened & ~m).any()  # output subset of input
        bigger = (m | (rng.random((12, 12)) < 0.2)).astype(np.uint8)
        assert not (pp.morph_open(m) & ~pp.morph_open(bigger)).any()


def test_opening_border_modes():
    # a 3x3 block in the corner: background border erodes it away harder
    m = np.zeros((5, 5), dtype=np.uint8)
    m[0:3, 0:3] = 1
    strict = pp.morph_open(m, border="background")
    lenient = pp.morph_open(m, border="ignore")
    assert strict.sum() <= lenient.sum()
    assert np.array_equal(pp.erode(m, border="ignore"),
                          erode_set_oracle(m, "ignore"))


def test_morphology_rejects_non_binary():
    with pytest.raises(ContractError):
        pp.morph_open(np.array([[0, 2], [1, 0]]))


# --- full pipeline ----------------------------------------------------------


def test_pipeline_output_has_original_dims():
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((2, 16, 16)).astype(np.float32) * 4
    out = pp.run(logits, (37, 53))
    assert out.shape == (37, 53)
    assert set(np.unique(out)).issubset({0, 1})


def test_pipeline_identity_settings_reproduce_threshold():
    rng = np.random.default_rng(7)
    logits = rng.standard_normal((2, 16, 16)).astype(np.float32) * 4
    cfg = pp.PostprocConfig(opening_enabled=False)
    out = pp.run(logits, (16, 16), cfg)
    want = pp.binarize(pp.prob_to_bytemap(logits), 128)
    assert np.array_equal(out, want)


def test_config_rejects_bad_threshold():
    with pytest.raises(ValueError):
        pp.PostprocConfig(threshold=300)
