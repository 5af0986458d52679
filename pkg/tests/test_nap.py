import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from napmat.errors import ConfigError, ShapeError
from napmat.nap import (HIGH_RES, NAPConfig, build_kernel, class_attention, importance,
                        keep_count, neighbor_awareness, prune, prune_to, received_attention,
                        score_tokens, top_indices)
from napmat.tokens import GridShape, TokenBatch

finite = st.floats(-1e3, 1e3, allow_nan=False)


def random_attn(rng, b, h, n):
    logits = rng.normal(size=(b, h, n, n))
    e = np.exp(logits)
    return e / e.sum(-1, keepdims=True)


def received_oracle(w):
    b, h, n, _ = w.shape
    out = np.zeros((b, n - 1))
    for bb in range(b):
        for i in range(1, n):
            total = 0.0
            for hh in range(h):
                s = 0.0
                for q in range(n):
                    s += w[bb, hh, q, i]
                total += s / n
            out[bb, i - 1] = total / h
    return out


def smooth_oracle(r, radius):
    raw = [1.0 / (abs(d) + 1) for d in range(-radius, radius + 1)]
    wts = [v / sum(raw) for v in raw]
    out = np.zeros_like(r)
    for i in range(len(r)):
        for j, d in enumerate(range(-radius, radius + 1)):
            if 0 <= i + d < len(r):
                out[i] += wts[j] * r[i + d]
    return out


def tokens_with(x, p=1):
    return TokenBatch.from_sequence(np.asarray(x, float)[None], protected=p)


# --- kernel ---

def test_kernel_values():
    assert build_kernel(0).weights.tolist() == [1.0]
    assert build_kernel(1).weights.tolist() == [0.25, 0.5, 0.25]
    w = build_kernel(3).weights
    raw = np.array([1 / 4, 1 / 3, 1 / 2, 1, 1 / 2, 1 / 3, 1 / 4])
    np.testing.assert_allclose(w, raw / raw.sum(), rtol=0, atol=1e-16)


@pytest.mark.parametrize("radius", range(17))
def test_kernel_normalized_and_symmetric(radius):
    w = build_kernel(radius).weights
    assert abs(w.sum() - 1) <= 1e-12
    assert np.array_equal(w, w[::-1])
    assert w.argmax() == radius


def test_kernel_negative_radius():
    with pytest.raises(ValueError):
        build_kernel(-1)


# --- received attention ---

def test_received_uniform():
    w = np.full((1, 2, 5, 5), 0.2)
    np.testing.assert_allclose(received_attention(w), 0.2, atol=1e-16)


def test_received_worked_example():
    # one head, three queries; columns 1 and 2 sum to 0.9 and 2.1
    w = np.array([[[[0.1, 0.3, 0.6],
                    [0.0, 0.3, 0.7],
                    [0.2, 0.3, 0.5]]]])
    w[0, 0, :, 2] = [0.6, 0.7, 0.8]
    np.testing.assert_allclose(received_attention(w), [[0.3, 0.7]], atol=1e-15)


def test_received_against_loop(rng):
    w = random_attn(rng, 2, 3, 8)
    np.testing.assert_allclose(received_attention(w), received_oracle(w), rtol=0, atol=1e-10)


def test_received_needs_two_tokens():
    with pytest.raises(ShapeError):
        received_attention(np.ones((1, 1, 1, 1)))


def test_class_attention_is_row_zero(rng):
    w = random_attn(rng, 1, 4, 6)
    np.testing.assert_allclose(class_attention(w), w[:, :, 0, 1:].mean(1))


# --- neighbor awareness ---

def test_phi_examples():
    np.testing.assert_allclose(neighbor_awareness(np.array([0.0, 1.0, 0.0]), build_kernel(1)),
                               [0.25, 0.5, 0.25], atol=1e-16)
    phi = neighbor_awareness(np.full(12, 0.3), build_kernel(3))
    np.testing.assert_allclose(phi[3:9], 0.3, atol=1e-15)
    assert phi[0] < 0.3


def test_phi_against_loop(rng):
    for _ in range(20):
        r = rng.random(10)
        np.testing.assert_allclose(neighbor_awareness(r, build_kernel(3)), smooth_oracle(r, 3),
                                   rtol=0, atol=1e-12)


# --- importance ---

def test_importance_examples():
    assert importance([0.2], [0.6], 0.1).xi[0] == pytest.approx(0.24, abs=1e-15)
    cls, phi = np.array([0.1, 0.5]), np.array([0.7, 0.2])
    assert np.array_equal(importance(cls, phi, 0.0).xi, cls)
    assert np.array_equal(importance(cls, phi, 1.0).xi, phi)
    with pytest.raises(ValueError):
        importance(cls, phi, 1.5)


@given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite), st.floats(0, 1))
def test_convex_blend(cls, phi, alpha):
    xi = importance(cls, phi, alpha).xi
    lo, hi = np.minimum(cls, phi), np.maximum(cls, phi)
    tol = 1e-9 * (1 + np.abs(cls) + np.abs(phi))
    assert (xi >= lo - tol).all() and (xi <= hi + tol).all()


@settings(max_examples=60)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_neighbor_effect_direction(seed, radius):
    rng = np.random.default_rng(seed)
    m = 12
    r = rng.random(m)
    i = int(rng.integers(m))
    j = min(m - 1, i + int(rng.integers(1, radius + 1)))
    bumped = r.copy()
    bumped[j] += rng.random()
    k = build_kernel(radius)
    cls = rng.random(m)
    before = importance(cls, neighbor_awareness(r, k), 0.3).xi[i]
    after = importance(cls, neighbor_awareness(bumped, k), 0.3).xi[i]
    assert after >= before


# --- selection and pruning ---

def test_keep_count_rounding():
    assert keep_count(0.7, 10) == 7
    assert keep_count(0.7, 196) == 138
    assert keep_count(0.7, 138) == 97
    assert keep_count(0.7, 97) == 68
    assert keep_count(1.0, 5) == 5
    assert keep_count(0.5, 7) == 4


def test_top_indices_ties_go_low():
    assert top_indices(np.array([[1.0, 1.0, 1.0, 1.0]]), 2).tolist() == [[0, 1]]
    assert top_indices(np.array([[0.1, 0.9, 0.5, 0.9]]), 2).tolist() == [[1, 3]]


def test_prune_worked_example_xi_weighted(rng):
    x = rng.normal(size=(5, 3))
    tokens = tokens_with(x)
    out, plan = prune(tokens, np.array([[0.4, 0.3, 0.2, 0.1]]), 0.5, weighting="xi")
    assert plan.keep_indices.tolist() == [[1, 2]]
    assert plan.fused_source_indices.tolist() == [[3, 4]]
    np.testing.assert_allclose(out.x[0, -1], (0.2 * x[3] + 0.1 * x[4]) / 0.3, atol=1e-15)
    assert out.sizes.tolist() == [[1, 1, 1, 2]]
    assert out.provenance(0)[3] == frozenset({2, 3})


def test_prune_uniform_is_size_weighted(rng):
    x = rng.normal(size=(5, 3))
    tokens = tokens_with(x)
    sizes = np.array([[1, 1, 1, 3.0, 1]])
    tokens = tokens.replace(sizes=sizes)
    out, _ = prune(tokens, np.array([[0.4, 0.3, 0.2, 0.1]]), 0.5)
    np.testing.assert_allclose(out.x[0, -1], (3 * x[3] + x[4]) / 4, atol=1e-15)


def test_prune_keep_all_is_identity(rng):
    tokens = tokens_with(rng.normal(size=(6, 2)))
    out, plan = prune(tokens, rng.random((1, 5)), 1.0)
    assert out is tokens and plan.fused_source_indices.size == 0


def test_prune_equal_scores():
    tokens = tokens_with(np.arange(16.0).reshape(8, 2))
    out, plan = prune(tokens, np.ones((1, 7)), 0.5)
    assert plan.keep_indices.tolist() == [[1, 2, 3, 4]]
    assert out.num_tokens == 1 + 4 + 1


def test_prune_keeps_sequence_order(rng):
    x = rng.normal(size=(7, 2))
    out, plan = prune(tokens_with(x), np.array([[0.1, 0.9, 0.2, 0.8, 0.7, 0.0]]), 0.5)
    assert plan.keep_indices.tolist() == [[2, 4, 5]]
    assert np.array_equal(out.x[0, 1:4], x[[2, 4, 5]])
    assert np.array_equal(out.x[0, 0], x[0])


def test_prune_bad_ratio(rng):
    tokens = tokens_with(rng.normal(size=(4, 2)))
    with pytest.raises(ValueError):
        prune(tokens, np.ones((1, 3)), 0.0)
    with pytest.raises(ShapeError):
        prune(tokens, np.ones((1, 4)), 0.5)


def test_second_prune_absorbs_fused(rng):
    tokens = tokens_with(rng.normal(size=(9, 3)))
    once, _ = prune(tokens, rng.random((1, 8)), 0.5)
    assert once.num_tokens == 6 and once.fused
    twice, plan = prune(once, rng.random((1, 4)), 0.5)
    assert twice.num_tokens == 4 and plan.absorbed_fused
    assert twice.sizes[0, -1] == 6
    np.testing.assert_allclose(twice.size_weighted_sum(), tokens.size_weighted_sum(), rtol=1e-12)


@settings(max_examples=80)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_keep_sets_nested(seed, k1, k2):
    rng = np.random.default_rng(seed)
    k1, k2 = sorted((k1, k2))
    xi = rng.integers(0, 5, size=(1, 15)).astype(float)   # plenty of ties
    tokens = tokens_with(rng.normal(size=(16, 2)))
    _, a = prune(tokens, xi, k1)
    _, b = prune(tokens, xi, k2)
    assert set(a.keep_indices[0]) <= set(b.keep_indices[0])


@settings(max_examples=80)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_affine_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    xi = rng.random((1, 12))
    tokens = tokens_with(rng.normal(size=(13, 2)))
    _, a = prune(tokens, xi, 0.6)
    _, b = prune(tokens, scale * xi + shift, 0.6)
    assert np.array_equal(a.keep_indices, b.keep_indices)


@settings(max_examples=80)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 11))
def test_partition_and_mass(seed, n_keep):
    rng = np.random.default_rng(seed)
    tokens = tokens_with(rng.normal(size=(13, 3)), p=1)
    tokens = tokens.replace(sizes=rng.integers(1, 4, size=(1, 13)).astype(float))
    out, plan = prune_to(tokens, rng.random((1, 12)), n_keep)
    assert sorted(plan.keep_indices[0].tolist() + plan.fused_source_indices[0].tolist()) == list(range(1, 13))
    assert out.sizes[0, 1:].sum() == tokens.sizes[0, 1:].sum()
    cells = [c for s in out.provenance(0)[1:] for c in s]
    assert sorted(cells) == list(range(12))


def test_score_tokens_skips_fused(rng):
    tokens = tokens_with(rng.normal(size=(6, 2)))
    fused, _ = prune(tokens, rng.random((1, 5)), 0.5)     # 1 + 3 + fused
    xi = score_tokens(random_attn(rng, 1, 2, 5), fused, radius=2)
    assert xi.xi.shape == (1, 3)


def test_config_validation():
    assert HIGH_RES.alpha == 0.95 and HIGH_RES.radius == 3
    for bad in (dict(radius=-1), dict(alpha=2.0), dict(keep_ratio=0.0), dict(fused_weighting="max")):
        with pytest.raises(ConfigError):
            NAPConfig(**bad)
