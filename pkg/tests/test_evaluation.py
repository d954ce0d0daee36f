import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankmotion.evaluation import (
    BinaryMask,
    dice,
    evaluate_run,
    pca_truncate,
    phase_dice,
    sv_cumfrac,
    warp_mask,
)
from rankmotion.fields import DisplacementField, GridGeometry
from rankmotion.lowrank import DeformationEnsemble, nuclear_norm

G = GridGeometry((10, 10, 10))


def random_ensemble(seed, m=6, g=G, rank=None):
    rng = np.random.default_rng(seed)
    n = 3 * g.n_voxels
    X = rng.normal(size=(m, n)) if rank is None else rng.normal(size=(m, rank)) @ rng.normal(size=(rank, n))
    return DeformationEnsemble.from_matrix(X, g, list(range(1, m + 1)))


def dense_truncate(e, k):
    U, s, Vt = np.linalg.svd(e.matrix(), full_matrices=False)
    return (U[:, :k] * s[:k]) @ Vt[:k]


class TestDice:
    def test_identical(self):
        m = BinaryMask(G, np.random.default_rng(0).random(G.dims) > 0.5)
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros(G.dims, bool)
        b = np.zeros(G.dims, bool)
        a[:5] = True
        b[5:] = True
        assert dice(BinaryMask(G, a), BinaryMask(G, b)) == 0.0

    def test_half_overlap(self):
        a = np.zeros(G.dims, bool)
        b = np.zeros(G.dims, bool)
        a.flat[:100] = True
        b.flat[50:150] = True
        assert dice(BinaryMask(G, a), BinaryMask(G, b)) == 0.5

    def test_empty_convention(self):
        e = BinaryMask(G, np.zeros(G.dims, bool))
        assert dice(e, e) == 1.0


class TestWarpMask:
    def test_identity(self):
        m = BinaryMask(G, np.random.default_rng(1).random(G.dims) > 0.5)
        assert np.array_equal(warp_mask(m, DisplacementField(G)).values, m.values)

    def test_whole_voxel_shift(self):
        v = np.zeros(G.dims, bool)
        v[4:6, 3:7, 2:5] = True
        u = np.zeros((3,) + G.dims)
        u[0] = 2.0
        out = warp_mask(BinaryMask(G, v), DisplacementField(G, u)).values
        expect = np.zeros(G.dims, bool)
        expect[2:4, 3:7, 2:5] = True
        assert np.array_equal(out, expect)

    def test_sphere_under_smooth_map(self):
        n = 64
        g = GridGeometry((n, n, n))
        x = g.coordinates()
        c, r = np.array([32.0, 30.0, 33.0]), 12.0
        bump = np.clip(1 - sum((x[i] - 32) ** 2 for i in range(3)) / 28.0 ** 2, 0, None) ** 3
        u = np.stack([2.5 * bump, -1.5 * bump, 3.0 * bump])
        sphere = sum((x[i] - c[i]) ** 2 for i in range(3)) <= r ** 2
        warped = warp_mask(BinaryMask(g, sphere), DisplacementField(g, u))
        y = x + u
        analytic = sum((y[i] - c[i]) ** 2 for i in range(3)) <= r ** 2
        assert dice(warped, BinaryMask(g, analytic)) >= 0.95


class TestCumfrac:
    def test_rank_one(self):
        np.testing.assert_allclose(sv_cumfrac(random_ensemble(2, rank=1)), 1.0, rtol=1e-12)

    def test_equal_singular_values(self):
        rng = np.random.default_rng(3)
        Q, _ = np.linalg.qr(rng.normal(size=(3 * G.n_voxels, 4)))
        e = DeformationEnsemble.from_matrix(Q.T * 5.0, G, [1, 2, 3, 4])
        np.testing.assert_allclose(sv_cumfrac(e), [0.25, 0.5, 0.75, 1.0], rtol=1e-10)

    def test_dense(self):
        e = random_ensemble(4)
        s = np.linalg.svd(e.matrix(), compute_uv=False)
        np.testing.assert_allclose(sv_cumfrac(e), np.cumsum(s) / s.sum(), rtol=1e-8)

    def test_zero_raises(self):
        with pytest.raises(ValueError):
            sv_cumfrac(DeformationEnsemble.identity(G, [1, 2]))


class TestPcaTruncate:
    def test_full_rank_unchanged(self):
        e = random_ensemble(5)
        np.testing.assert_allclose(pca_truncate(e, 6).matrix(), e.matrix(), atol=1e-8)

    def test_rank_one_k1(self):
        e = random_ensemble(6, rank=1)
        np.testing.assert_allclose(pca_truncate(e, 1).matrix(), e.matrix(), atol=1e-8 * np.abs(e.matrix()).max())

    def test_dense_rank_two(self):
        e = random_ensemble(7)
        ref = dense_truncate(e, 2)
        assert np.linalg.norm(pca_truncate(e, 2).matrix() - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_k_zero(self):
        assert np.all(pca_truncate(random_ensemble(8), 0).matrix() == 0)

    def test_centered_keeps_mean(self):
        e = random_ensemble(9)
        out = pca_truncate(e, 0, center=True).matrix()
        np.testing.assert_allclose(out, np.broadcast_to(e.matrix().mean(axis=0), out.shape), atol=1e-12)

    def test_range(self):
        with pytest.raises(ValueError):
            pca_truncate(random_ensemble(10), 7)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 5))
def test_truncation_idempotent_and_shrinking(seed, k):
    e = random_ensemble(seed, g=GridGeometry((4, 4, 4)))
    once = pca_truncate(e, k)
    twice = pca_truncate(once, k)
    assert np.allclose(twice.matrix(), once.matrix(), atol=1e-10 * max(1.0, np.abs(once.matrix()).max()))
    assert nuclear_norm(once) <= nuclear_norm(e) + 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_cumfrac_monotone_ends_at_one(seed):
    c = sv_cumfrac(random_ensemble(seed, g=GridGeometry((4, 4, 4))))
    assert np.all(np.diff(c) >= 0) and c[-1] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 0.9), st.floats(0.1, 0.9))
def test_dice_symmetric_bounded(seed, pa, pb):
    rng = np.random.default_rng(seed)
    g = GridGeometry((5, 5, 5))
    a, b = BinaryMask(g, rng.random(g.dims) < pa), BinaryMask(g, rng.random(g.dims) < pb)
    d = dice(a, b)
    assert d == dice(b, a) and 0.0 <= d <= 1.0
    assert (d == 1.0) == np.array_equal(a.values, b.values)


class TestEvaluateRun:
    def test_zero_motion(self, small_phantom):
        masks = small_phantom.masks
        ident = DeformationEnsemble.identity(small_phantom.images[0].geometry, [1, 2, 3])
        rep = evaluate_run({"id": ident}, masks, ks=[0, 1, 3])
        base = {name: np.mean([dice(m, ms[0]) for m in ms[1:]]) for name, ms in masks.items()}
        for name in masks:
            assert rep.mean_dice("id", name) == pytest.approx(base[name])
            assert rep.pca_dice("id", name, 0) == pytest.approx(base[name])

    def test_truth_beats_baseline(self, small_phantom):
        rep = evaluate_run({"truth": small_phantom.true_displacements}, small_phantom.masks)
        assert rep.mean_dice("truth", "tumor") > rep.pca_dice("truth", "tumor", 0)
        full = phase_dice(small_phantom.true_displacements, small_phantom.masks)["tumor"]
        assert rep.pca_dice("truth", "tumor", 3) == pytest.approx(np.mean(full), abs=1e-10)
        assert rep.cumfrac_rows[0][2][-1] == 1.0
