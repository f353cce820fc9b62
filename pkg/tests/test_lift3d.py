import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fus3dkit.errors import ValidationError
from fus3dkit.lift3d import (
    FULL_CONFIG,
    LatentVolume,
    LiftConfig,
    LiftModel,
    TokenSet,
    canonical_embedding,
    schedule,
    synthetic_tokens,
    trace_shapes,
)

CFG = LiftConfig()


@pytest.fixture(scope="module")
def model():
    return LiftModel(CFG)


def rel(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


def naive_attention(att, x, kv):
    # per-head loops with an explicit softmax, no shared code with the module
    d = x.shape[1]
    dh = d // att.heads
    q = x @ att.wq + att.bq
    k = kv @ att.wk + att.bk
    v = kv @ att.wv + att.bv
    out = np.zeros_like(q)
    for h in range(att.heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(len(x)):
            s = k[:, sl] @ q[i, sl] / np.sqrt(dh)
            w = np.exp(s - s.max())
            out[i, sl] = (w / w.sum()) @ v[:, sl]
    return out @ att.wo + att.bo


def test_config_defaults_and_validation():
    assert CFG.n_blocks == 8
    assert schedule(CFG) == [(r, b) for r in range(2) for b in range(4)]
    with pytest.raises(ValidationError):
        LiftConfig(latent_dim=30, n_heads=4)
    with pytest.raises(ValidationError):
        LiftConfig(latent_extent=0)


def test_embedding_distinct_and_deterministic():
    a = canonical_embedding(CFG)
    assert a.tokens.shape == (64, 32)
    assert len(np.unique(a.tokens, axis=0)) == 64
    assert np.array_equal(a.tokens, canonical_embedding(CFG).tokens)
    assert not np.array_equal(a.tokens, canonical_embedding(LiftConfig(seed=1)).tokens)


def test_full_scale_sizes():
    assert FULL_CONFIG.n_blocks == 8
    assert FULL_CONFIG.latent_extent**3 == 4096 and FULL_CONFIG.latent_dim == 2048
    trace = trace_shapes(FULL_CONFIG, 2, 16)
    assert trace[0] == ("embedding", (4096, 2048))
    assert trace[-1] == ("sdf", (64, 64, 64))
    assert sum(name.endswith(" out") and "cross" not in name for name, _ in trace) == 8


def test_attention_matches_naive(model):
    rng = np.random.default_rng(0)
    x, kv = rng.normal(size=(10, 32)), rng.normal(size=(7, 32))
    att = model.blocks[0].cross
    np.testing.assert_allclose(att(x, kv), naive_attention(att, x, kv), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("n_views", [1, 2, 8])
def test_end_to_end_shapes(model, n_views):
    init = canonical_embedding(CFG)
    tokens = synthetic_tokens(CFG, n_views, 16, seed=n_views)
    trace = []
    out = model.extract(init, tokens, trace=trace)
    assert trace == schedule(CFG)
    assert out.tokens.shape == (64, 32)
    sdf = model.decode(out)
    assert sdf.values.shape == (16, 16, 16)
    assert sdf.spec.voxel_size == pytest.approx(1 / 16)
    assert np.all(np.isfinite(sdf.values))
    shapes = dict(trace_shapes(CFG, n_views, 16))
    assert shapes["block r0 s0 cross logits"] == (4, 64, n_views * 16)


def test_permutation_invariance(model):
    rng = np.random.default_rng(1)
    init = canonical_embedding(CFG)
    tokens = synthetic_tokens(CFG, 3, 16, seed=2)
    out = model.extract(init, tokens).tokens
    shuffled = []
    for s in tokens.stages:
        flat = s.reshape(-1, s.shape[-1])[rng.permutation(48)]
        shuffled.append(flat.reshape(s.shape))
    out2 = model.extract(init, TokenSet(tuple(shuffled))).tokens
    assert rel(out2, out) <= 1e-5


def test_duplication_invariance(model):
    init = canonical_embedding(CFG)
    tokens = synthetic_tokens(CFG, 2, 16, seed=3)
    doubled = TokenSet(tuple(np.concatenate([s, s]) for s in tokens.stages))
    a = model.extract(init, tokens).tokens
    b = model.extract(init, doubled).tokens
    assert rel(b, a) <= 1e-5


def test_zero_tokens_equal_self_only(model):
    init = canonical_embedding(CFG)
    zero = TokenSet(tuple(np.zeros((2, 16, 32)) for _ in range(4)))
    a = model.extract(init, zero).tokens
    b = model.extract(init, zero, cross_attention=False).tokens
    np.testing.assert_array_equal(a, b)


def test_determinism_across_models():
    init = canonical_embedding(CFG)
    tokens = synthetic_tokens(CFG, 2, 16)
    a, b = LiftModel(CFG), LiftModel(CFG)
    la, lb = a.extract(init, tokens), b.extract(init, tokens)
    assert np.array_equal(la.tokens, lb.tokens)
    assert np.array_equal(a.decode(la).values, b.decode(lb).values)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_finite_for_bounded_tokens(seed, bound):
    m = LiftModel(CFG)
    rng = np.random.default_rng(seed)
    tokens = TokenSet(tuple(rng.uniform(-bound, bound, (2, 8, 32)) for _ in range(4)))
    out = m.extract(canonical_embedding(CFG), tokens)
    assert np.all(np.isfinite(m.decode(out).values))


def test_dimension_errors(model):
    init = canonical_embedding(CFG)
    with pytest.raises(ValidationError):
        model.extract(init, synthetic_tokens(LiftConfig(latent_dim=16), 1, 4))
    with pytest.raises(ValidationError):
        model.extract(init, TokenSet(tuple(np.zeros((1, 4, 32)) for _ in range(3))))
    with pytest.raises(ValidationError):
        TokenSet((np.zeros((1, 4, 32)), np.zeros((1, 4, 16))))
    with pytest.raises(ValidationError):
        LatentVolume(np.zeros((10, 32)), 4, CFG.grid_spec())
    with pytest.raises(ValidationError):
        LatentVolume(np.full((64, 32), np.nan), 4, CFG.grid_spec())


def test_toy_pipeline_under_one_second():
    t0 = time.perf_counter()
    m = LiftModel(CFG)
    out = m.extract(canonical_embedding(CFG), synthetic_tokens(CFG, 2, 16))
    m.decode(out)
    assert time.perf_counter() - t0 < 1.0
