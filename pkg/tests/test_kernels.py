"""Parity between the compiled kernels and the numpy fallbacks."""
import numpy as np
import pytest

from pearl import kernels

needs_ext = pytest.mark.skipif(
    not kernels.HAVE_COMPILED, reason="compiled extension not built"
)


@needs_ext
def test_topk_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(20):
        nq, npool = int(rng.integers(1, 40)), int(rng.integers(2, 80))
        sims = rng.normal(size=(nq, npool))
        # inject ties
        sims[rng.random(sims.shape) < 0.2] = 0.25
        k = int(rng.integers(1, npool))
        ic, vc = kernels.topk_from_similarity(sims, k, backend="compiled")
        infb, vn = kernels.topk_from_similarity(sims, k, backend="numpy")
        assert np.array_equal(ic, infb)
        assert np.array_equal(vc, vn)


@needs_ext
def test_topk_exclude_self_agree():
    rng = np.random.default_rng(1)
    sims = rng.normal(size=(30, 30))
    ic, _ = kernels.topk_from_similarity(sims, 5, exclude_self=True, backend="compiled")
    infb, _ = kernels.topk_from_similarity(sims, 5, exclude_self=True, backend="numpy")
    assert np.array_equal(ic, infb)
    assert not np.any(ic == np.arange(30)[:, None])


@needs_ext
def test_separation_backends_agree():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(80, 12))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    labels = rng.integers(0, 4, size=80).astype(np.int32)
    a = kernels.separation_sums(x, labels, backend="compiled")
    b = kernels.separation_sums(x, labels, backend="numpy")
    assert a[1] == b[1] and a[3] == b[3]
    assert a[0] == pytest.approx(b[0], abs=1e-9)
    assert a[2] == pytest.approx(b[2], abs=1e-9)


def test_k_bounds_checked():
    sims = np.zeros((2, 3))
    with pytest.raises(ValueError):
        kernels.topk_from_similarity(sims, 0)
    with pytest.raises(ValueError):
        kernels.topk_from_similarity(sims, 4)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.topk_from_similarity(np.zeros((1, 2)), 1, backend="cuda")
