import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_triangular

from tlrgeo.core import FactorizationError, InvalidArgument, MaternParams, apply_permutation, generate_uniform_locations
from tlrgeo.covgen import TiledDenseMatrix, build_covariance, simulate_field
from tlrgeo.ordering import order_locations
from tlrgeo.tlr import LowRankTile, compress_matrix, reconstruct_tile
from tlrgeo.tlr_linalg import logdet, recompress_sum, time_factorization, tlr_potrf, tlr_trsv


@pytest.fixture(scope="module")
def matern1600():
    locs = generate_uniform_locations(1600, seed=21)
    locs = apply_permutation(locs, order_locations(locs, "hilbert"))
    p = MaternParams(1, 0.1, 0.5)
    a = build_covariance(locs, "matern", p, nb=320)
    t = compress_matrix(a, 1e-7)
    dense = a.to_dense()
    return locs, p, t, dense, tlr_potrf(t), np.linalg.cholesky(dense)


def test_single_tile_is_dense_cholesky():
    locs = generate_uniform_locations(40, seed=1)
    a = build_covariance(locs, "matern", MaternParams(1, 0.2, 1.5))
    f = tlr_potrf(compress_matrix(a, 1e-7))
    assert np.allclose(f.to_dense(), np.linalg.cholesky(a.to_dense()), rtol=0, atol=1e-13)


def test_identity():
    f = tlr_potrf(compress_matrix(TiledDenseMatrix.from_dense(np.eye(8), 4), 1e-7))
    assert np.array_equal(f.to_dense(), np.eye(8))
    assert logdet(f) == 0.0
    b = np.arange(8.0)
    assert np.array_equal(tlr_trsv(f, b), b)


def test_scalar_logdet():
    f = tlr_potrf(compress_matrix(TiledDenseMatrix.from_dense(4 * np.eye(10), 3), 1e-7))
    assert logdet(f) == pytest.approx(10 * math.log(4), rel=1e-15)


def test_factor_residual(matern1600):
    _, _, _, dense, f, _ = matern1600
    ld = f.to_dense()
    assert np.allclose(np.triu(ld, 1), 0)
    assert all(np.all(np.diag(d) > 0) for d in f.diagonal)
    assert np.linalg.norm(ld @ ld.T - dense) / np.linalg.norm(dense) <= 1e-5


def test_solve_and_logdet(matern1600):
    locs, p, _, dense, f, chol = matern1600
    z = simulate_field(locs, "matern", p, seed=4)
    y = tlr_trsv(f, z)
    assert np.linalg.norm(f.to_dense() @ y - z) / np.linalg.norm(z) <= 1e-8
    y_dense = solve_triangular(chol, z, lower=True)
    assert np.linalg.norm(y - y_dense) / np.linalg.norm(y_dense) <= 1e-5
    assert abs(logdet(f) - 2 * np.sum(np.log(np.diag(chol)))) <= 1e-3


def test_input_untouched(matern1600):
    _, _, t, dense, _, _ = matern1600
    assert np.array_equal(t.diagonal[0], dense[:320, :320])


def test_threaded_schedule_matches(matern1600):
    _, _, t, _, f, _ = matern1600
    g = tlr_potrf(t, threads=4)
    a, b = f.to_dense(), g.to_dense()
    assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)


def test_sequential_is_bit_stable(matern1600):
    _, _, t, _, f, _ = matern1600
    assert np.array_equal(tlr_potrf(t).to_dense(), f.to_dense())


def test_not_positive_definite():
    a = np.eye(6)
    a[4, 4] = -1.0
    with pytest.raises(FactorizationError) as info:
        tlr_potrf(compress_matrix(TiledDenseMatrix.from_dense(a, 2), 1e-7))
    assert info.value.tile == 2 and info.value.pivot == 1


def test_trsv_shape_check():
    f = tlr_potrf(compress_matrix(TiledDenseMatrix.from_dense(np.eye(4), 2), 1e-7))
    with pytest.raises(InvalidArgument):
        tlr_trsv(f, np.ones(5))


# --- recompression --------------------------------------------------------


def random_lowrank(rng, m, n, r):
    return LowRankTile(rng.standard_normal((m, r)), rng.standard_normal((n, r)))


def test_recompress_with_zero():
    rng = np.random.default_rng(0)
    a = random_lowrank(rng, 20, 15, 3)
    out = recompress_sum(a, LowRankTile.zeros(20, 15), 1e-7)
    assert out.rank == 3 and np.array_equal(reconstruct_tile(out), reconstruct_tile(a))


def test_recompress_cancellation():
    rng = np.random.default_rng(1)
    a = random_lowrank(rng, 20, 15, 4)
    neg = LowRankTile(-a.u, a.v)
    assert recompress_sum(a, neg, 1e-7).rank == 0


def test_recompress_5_plus_7():
    rng = np.random.default_rng(2)
    a, b = random_lowrank(rng, 100, 100, 5), random_lowrank(rng, 100, 100, 7)
    out = recompress_sum(a, b, 1e-7)
    total = reconstruct_tile(a) + reconstruct_tile(b)
    s = np.linalg.svd(total, compute_uv=False)
    assert out.rank == int(np.sum(s > 1e-7 * s[0])) == 12
    assert np.linalg.norm(total - reconstruct_tile(out), 2) <= 1e-7 * s[0] * (1 + 1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 12), st.integers(0, 12),
       st.floats(1e-10, 1e-2), st.integers(0, 2**32))
def test_recompress_bound_property(m, n, ra, rb, eps, seed):
    rng = np.random.default_rng(seed)
    # geometric column scaling gives a spread spectrum
    a = LowRankTile(rng.standard_normal((m, ra)) * np.logspace(0, -8, ra), rng.standard_normal((n, ra)))
    b = LowRankTile(rng.standard_normal((m, rb)) * np.logspace(0, -8, rb), rng.standard_normal((n, rb)))
    out = recompress_sum(a, b, eps)
    total = reconstruct_tile(a) + reconstruct_tile(b)
    assert out.rank <= ra + rb
    s1 = np.linalg.norm(total, 2)
    assert np.linalg.norm(total - reconstruct_tile(out), 2) <= eps * s1 * (1 + 1e-6) + 1e-13 * max(1.0, s1)


def test_recompress_shape_mismatch():
    with pytest.raises(InvalidArgument):
        recompress_sum(LowRankTile.zeros(3, 3), LowRankTile.zeros(3, 4), 1e-7)


# --- timing ---------------------------------------------------------------


def test_time_factorization_record():
    locs = generate_uniform_locations(300, seed=2)
    t = compress_matrix(build_covariance(locs, "matern", MaternParams(1, 0.1, 0.5), nb=100), 1e-7)
    rec, f = time_factorization(t, runs=3, ordering="none", kernel="matern", params={"beta": 0.1})
    assert set(rec) == {"n", "nb", "epsilon", "ordering", "kernel", "params", "median_seconds", "runs"}
    assert len(rec["runs"]) == 3 and rec["median_seconds"] == sorted(rec["runs"])[1]
    rec2, f2 = time_factorization(t, runs=1)
    assert np.array_equal(f.to_dense(), f2.to_dense())
    with pytest.raises(InvalidArgument):
        time_factorization(t, runs=0)


@pytest.mark.slow
def test_time_scales_with_n():
    p = MaternParams(1, 0.1, 0.5)
    medians = []
    for n in (3600, 10_000):
        locs = generate_uniform_locations(n, seed=1)
        locs = apply_permutation(locs, order_locations(locs, "hilbert"))
        from tlrgeo.tlr import compress_covariance

        rec, _ = time_factorization(compress_covariance(locs, "matern", p, 900, 1e-7), runs=3)
        medians.append(rec["median_seconds"])
    assert medians[0] <= medians[1]
