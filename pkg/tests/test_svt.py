import numpy as np
import pytest
from hypothesis import given, strategies as st

from svretarget.params import ParamSet
from svretarget.svt import (AttentionTrace, SVTConfig, TokenGrid, _head, encoder_forward, factorized_attention,
                            init_svt, patchify, stereo_patch_embed, svt_feature_map, svt_forward)
from svretarget.tensor import ContractError, DimensionError, Tensor

TOY = SVTConfig(t=1, h=2, w=2, d=12, layers=1, heads=3, mlp_dim=16, pos_grid=(2, 3))


def _params(cfg=TOY, seed=0):
    p = ParamSet(seed=seed, dtype=np.float64)
    init_svt(p, cfg)
    return p


def _head_weights(p, i=0):
    return [p[f"svt.layer0.head{i}.{m}"] for m in ("wq", "wk", "wv")]


def test_token_counts():
    cfg = SVTConfig()
    assert cfg.grid(4, 224, 224) == (2, 14, 14)
    frames = np.zeros((4, 3, 224, 224), np.float32)
    assert patchify(frames, cfg).shape[:3] == (2, 14, 14)
    assert np.prod(cfg.grid(4, 224, 224)) == 392


@given(st.integers(1, 9), st.integers(8, 40), st.integers(8, 40), st.integers(1, 3), st.integers(2, 8))
def test_floor_formulas(T, H, W, t, h):
    cfg = SVTConfig(t=t, h=h, w=h, d=6, heads=3)
    if T < t or H < h or W < h:
        with pytest.raises(DimensionError):
            cfg.grid(T, H, W)
    else:
        assert cfg.grid(T, H, W) == (T // t, H // h, W // h)


def test_heads_must_divide_dimension():
    with pytest.raises(ContractError):
        SVTConfig(d=10, heads=3)


def test_zero_input_gives_zero_tokens():
    p = _params()
    p["svt.pos"].data[:] = 0
    grid = stereo_patch_embed(np.zeros((2, 3, 4, 6)), np.zeros((4, 6)), TOY, p)
    assert grid.counts == (2, 2, 3)
    assert not grid.tokens.data.any() and not grid.disparity.data.any()


def test_zero_tokens_zero_bias_give_zero_map():
    p = _params()
    grid = TokenGrid(Tensor(np.zeros((2, 2, 3, 12))), Tensor(np.zeros((2, 3, 12))))
    assert not svt_feature_map(grid, p, TOY).data.any()


def test_zero_layers_is_identity(rng):
    cfg = SVTConfig(t=1, h=2, w=2, d=12, layers=0, heads=3, pos_grid=(2, 3))
    grid = TokenGrid(Tensor(rng.normal(size=(2, 2, 3, 12))), Tensor(rng.normal(size=(2, 3, 12))))
    out = encoder_forward(grid, _params(cfg), cfg)
    assert np.array_equal(out.tokens.data, grid.tokens.data)


def test_attention_rows_sum_to_one(rng):
    p = _params()
    grid = TokenGrid(Tensor(rng.normal(size=(3, 2, 3, 12))), Tensor(rng.normal(size=(2, 3, 12))))
    traces = []
    encoder_forward(grid, p, TOY, traces=traces)
    weights = traces[0].weights
    assert len(weights) == 3
    for a in weights:
        assert np.abs(a.sum(axis=-1) - 1).max() <= 1e-6
        assert a.min() >= 0


@pytest.mark.parametrize("axis", ["spatial", "temporal", "disparity"])
def test_axis_restriction(axis, rng):
    p = _params()
    x0 = rng.normal(size=(3, 2, 3, 12))
    disp = Tensor(rng.normal(size=(2, 3, 12)))
    wq, wk, wv = _head_weights(p)
    base = _head(Tensor(x0), disp, axis, wq, wk, wv, None).data
    t, i, j = 1, 0, 2
    x1 = x0.copy()
    if axis == "spatial":
        x1[0] += 5.0                 # other time index: outside every time-1 query's group
        same = np.s_[1:]
    elif axis == "temporal":
        x1[:, 1] += 5.0              # other spatial row: outside the group of queries in row 0
        same = np.s_[:, 0]
    else:
        x1[t, i, j] += 5.0           # only the query itself feeds a disparity head
        keep = np.ones(x0.shape[:3], bool)
        keep[t, i, j] = False
        same = keep
    out = _head(Tensor(x1), disp, axis, wq, wk, wv, None).data
    assert np.array_equal(out[same], base[same])


def test_temporal_head_with_equal_values_is_identity_in_time(rng):
    p = _params()
    wq, wk, wv = _head_weights(p, 1)
    one = rng.normal(size=(1, 2, 3, 12))
    x = np.repeat(one, 3, axis=0)
    out = _head(Tensor(x), Tensor(np.zeros((2, 3, 12))), "temporal", wq, wk, wv, None).data
    v = (one @ wv.data)[0]
    assert np.allclose(out, v[None], atol=1e-12)


def test_single_time_step(rng):
    p = _params()
    wq, wk, wv = _head_weights(p, 1)
    x = rng.normal(size=(1, 2, 3, 12))
    out = _head(Tensor(x), Tensor(np.zeros((2, 3, 12))), "temporal", wq, wk, wv, None).data
    assert np.allclose(out, x @ wv.data, atol=1e-12)


def test_spatial_permutation_equivariance(rng):
    p = _params()
    wq, wk, wv = _head_weights(p, 0)
    x = rng.normal(size=(2, 2, 3, 12))
    perm = rng.permutation(6)
    xp = x.reshape(2, 6, 12)[:, perm].reshape(x.shape)
    disp = Tensor(np.zeros((2, 3, 12)))
    out = _head(Tensor(x), disp, "spatial", wq, wk, wv, None).data.reshape(2, 6, -1)
    outp = _head(Tensor(xp), disp, "spatial", wq, wk, wv, None).data.reshape(2, 6, -1)
    # exact up to the summation order of the softmax denominators (double precision)
    assert np.allclose(outp, out[:, perm], rtol=0, atol=1e-12)


def test_head_assignment_is_checked(rng):
    p = _params()
    x = Tensor(rng.normal(size=(1, 2, 3, 12)))
    with pytest.raises(ContractError):
        factorized_attention(x, Tensor(np.zeros((2, 3, 12))), p, "svt.layer0", ["spatial", "temporal"])
    with pytest.raises(ContractError):
        factorized_attention(x, Tensor(np.zeros((2, 3, 12))), p, "svt.layer0", ["spatial", "temporal", "depth"])


def test_depatch_places_patches(rng):
    cfg = SVTConfig(t=1, h=2, w=2, d=12, layers=0, heads=3, out_channels=1, pos_grid=(2, 3))
    p = _params(cfg)
    p["svt.depatch.weight"].data[:] = 0
    p["svt.depatch.weight"].data[0, :4] = 1.0        # every pixel of a patch copies token feature 0
    tok = np.zeros((1, 2, 3, 12))
    tok[0, :, :, 0] = np.arange(6).reshape(2, 3)
    m = svt_feature_map(TokenGrid(Tensor(tok), Tensor(np.zeros((2, 3, 12)))), p, cfg).data[0]
    assert np.array_equal(m, np.kron(np.arange(6).reshape(2, 3), np.ones((2, 2))))


def test_forward_shape_and_determinism(rng):
    frames = rng.random((2, 3, 5, 7))
    disp = rng.random((5, 7))
    a = svt_forward(frames, disp, _params(), TOY).data
    b = svt_forward(frames, disp, _params(), TOY).data
    assert a.shape == (3, 4, 6)
    assert np.array_equal(a, b)
