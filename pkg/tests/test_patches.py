import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melpatch.errors import ShapeError
from melpatch.frontend import FrontendConfig, MelSpectrogram
from melpatch.patches import PatchGridSpec, PatchSet, grid_dims, patchify, tokens_per_second, unpatchify

CFG = FrontendConfig()


def mel(values, cfg=CFG):
    return MelSpectrogram(np.asarray(values, dtype=np.float64), cfg)


def test_grid_dims():
    assert grid_dims(128, 80) == (32, 20)
    assert grid_dims(125, 80) == (32, 20)
    assert grid_dims(1, 80) == (1, 20)
    with pytest.raises(ShapeError):
        grid_dims(8, 81)


def test_tokens_per_second():
    assert tokens_per_second(CFG) == 625.0
    assert tokens_per_second(CFG) / 20 == 31.25


def test_constant():
    ps = patchify(mel(np.full((12, 80), 2.5)))
    assert ps.patches.shape == (3, 20, 16)
    assert (ps.patches == 2.5).all()


def test_layout_frame_major():
    values = np.arange(8 * 80, dtype=np.float64).reshape(8, 80)
    ps = patchify(mel(values))
    assert ps.patches.shape == (2, 20, 16)
    expected = [values[r, c] for r in range(4) for c in range(4)]
    np.testing.assert_array_equal(ps.patches[0, 0], expected)
    # patch (1, 3) covers frames 4..7, bands 12..15
    np.testing.assert_array_equal(ps.patches[1, 3].reshape(4, 4), values[4:8, 12:16])


def test_padding_uses_log_floor():
    values = np.zeros((125, 80))
    ps = patchify(mel(values))
    last = ps.patches[31, 0].reshape(4, 4)
    assert (last[0] == 0).all()
    assert (last[1:] == math.log(1e-5)).all()
    assert unpatchify(ps).values.shape == (125, 80)
    custom = patchify(mel(values), PatchGridSpec(pad_value=-3.0))
    assert (custom.patches[31, 0].reshape(4, 4)[1:] == -3.0).all()


def test_single_patch():
    cfg = FrontendConfig(n_mels=4)
    out = unpatchify(PatchSet(np.arange(16.0).reshape(1, 1, 16), 4, cfg))
    np.testing.assert_array_equal(out.values, np.arange(16.0).reshape(4, 4))


def test_swap_two_patches():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(8, 80))
    ps = patchify(mel(values))
    swapped = ps.patches.copy()
    swapped[0, 2], swapped[1, 5] = ps.patches[1, 5].copy(), ps.patches[0, 2].copy()
    out = unpatchify(PatchSet(swapped, 8, CFG)).values
    expected = values.copy()
    expected[0:4, 8:12], expected[4:8, 20:24] = values[4:8, 20:24], values[0:4, 8:12]
    np.testing.assert_array_equal(out, expected)


def test_unpatchify_rejects_bad_original_t():
    ps = patchify(mel(np.zeros((8, 80))))
    with pytest.raises(ShapeError):
        unpatchify(PatchSet(ps.patches, 9, CFG))
    with pytest.raises(ShapeError):
        unpatchify(PatchSet(ps.patches, 4, CFG))


@settings(max_examples=60, deadline=None)
@given(
    t=st.integers(1, 40),
    cols=st.integers(1, 6),
    pt=st.integers(1, 5),
    pf=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
)
def test_roundtrip_random_shapes(t, cols, pt, pf, seed):
    spec = PatchGridSpec(pt, pf)
    cfg = FrontendConfig(n_mels=cols * pf)
    values = np.random.default_rng(seed).normal(size=(t, cols * pf))
    ps = patchify(mel(values, cfg), spec)
    assert ps.patches.shape == (math.ceil(t / pt), cols, pt * pf)
    np.testing.assert_array_equal(unpatchify(ps, spec).values, values)
    # the other direction, on a fully populated grid
    again = patchify(unpatchify(PatchSet(ps.patches, ps.rows * pt, cfg), spec), spec)
    np.testing.assert_array_equal(again.patches, ps.patches)
