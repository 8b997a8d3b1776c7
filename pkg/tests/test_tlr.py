import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlrgeo.core import InvalidArgument, MaternParams, apply_permutation, generate_uniform_locations
from tlrgeo.covgen import TiledDenseMatrix, build_covariance
from tlrgeo.ordering import order_locations
from tlrgeo.tlr import (
    LowRankTile,
    compress_covariance,
    compress_matrix,
    compress_tile,
    covariance_rank_grid,
    rank_stats,
    reconstruct_tile,
    tile_rank,
    write_rank_heatmap,
    write_rank_report,
)


def test_zero_tile():
    lr = compress_tile(np.zeros((6, 4)), 1e-7)
    assert lr.rank == 0 and lr.u.shape == (6, 0) and lr.v.shape == (4, 0)
    assert np.array_equal(reconstruct_tile(lr), np.zeros((6, 4)))


def test_outer_product_rank_one():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(30), rng.standard_normal(20)
    t = np.outer(a, b)
    lr = compress_tile(t, 1e-7)
    assert lr.rank == 1
    assert np.allclose(reconstruct_tile(lr), t, rtol=0, atol=1e-14 * np.abs(t).max())


def test_factor_convention():
    rng = np.random.default_rng(2)
    t = rng.standard_normal((40, 40))
    lr = compress_tile(t, 1e-3)
    assert np.allclose(lr.v.T @ lr.v, np.eye(lr.rank), atol=1e-12)
    # U carries the singular values: its column norms are sigma_1..sigma_r
    s = np.linalg.svd(t, compute_uv=False)[: lr.rank]
    assert np.allclose(np.linalg.norm(lr.u, axis=0), s, rtol=1e-10)


def test_random_gaussian_tile_bound():
    rng = np.random.default_rng(3)
    t = rng.standard_normal((100, 100))
    lr = compress_tile(t, 1e-7)
    s = np.linalg.svd(t, compute_uv=False)
    err = np.linalg.norm(t - reconstruct_tile(lr), 2)
    assert err <= 1e-7 * s[0]
    assert lr.rank == int(np.sum(s > 1e-7 * s[0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 256), st.integers(1, 256), st.floats(1e-12, 0.5), st.integers(0, 2**32))
def test_spectral_bound_against_full_svd(m, n, eps, seed):
    rng = np.random.default_rng(seed)
    # decaying spectrum so the truncation is non-trivial
    k = min(m, n)
    q1, _ = np.linalg.qr(rng.standard_normal((m, k)))
    q2, _ = np.linalg.qr(rng.standard_normal((n, k)))
    t = (q1 * np.logspace(0, -14, k)) @ q2.T
    lr = compress_tile(t, eps)
    s = np.linalg.svd(t, compute_uv=False)
    assert lr.rank <= k
    err = np.linalg.norm(t - reconstruct_tile(lr), 2)
    assert err <= eps * s[0] * (1 + 1e-8) + 1e-15
    assert tile_rank(t, eps) == lr.rank


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-12, 1e-1), st.floats(1e-12, 1e-1), st.integers(0, 2**32))
def test_rank_monotone_in_epsilon(e1, e2, seed):
    lo, hi = sorted((e1, e2))
    t = build_covariance(generate_uniform_locations(60, seed), "matern", MaternParams(1, 0.1, 0.5)).to_dense()[:30, 30:]
    assert compress_tile(t, lo).rank >= compress_tile(t, hi).rank


def test_epsilon_must_be_positive():
    with pytest.raises(InvalidArgument):
        compress_tile(np.eye(3), 0.0)


def test_single_tile_matrix():
    a = build_covariance(generate_uniform_locations(10, 1), "matern", MaternParams(1, 0.1, 0.5))
    t = compress_matrix(a, 1e-7)
    assert t.offdiagonal == {}
    assert np.array_equal(t.to_dense(), a.to_dense())
    rep = rank_stats(t)
    assert rep.min is None and rep.max is None and rep.memory_bytes_tlr == 0


def test_identity_has_zero_ranks():
    t = compress_matrix(TiledDenseMatrix.from_dense(np.eye(12), 4), 1e-7)
    assert set(t.ranks().values()) == {0}


def test_global_reconstruction():
    locs = generate_uniform_locations(2000, seed=5)
    locs = apply_permutation(locs, order_locations(locs, "hilbert"))
    a = build_covariance(locs, "matern", MaternParams(1, 0.1, 0.5), nb=1000)
    t = compress_matrix(a, 1e-7)
    dense = a.to_dense()
    assert np.linalg.norm(dense - t.to_dense()) / np.linalg.norm(dense) <= 1e-6


def test_streaming_matches_two_pass():
    locs = generate_uniform_locations(300, seed=6)
    p = MaternParams(1, 0.1, 0.8)
    a = compress_matrix(build_covariance(locs, "matern", p, nb=70), 1e-7)
    b = compress_covariance(locs, "matern", p, 70, 1e-7)
    assert a.ranks() == b.ranks()
    assert np.allclose(a.to_dense(), b.to_dense(), rtol=0, atol=1e-14)
    n, grid = covariance_rank_grid(locs, "matern", p, 70, 1e-7)
    assert n == 300 and grid == a.ranks()


def test_dense_memory_accounting():
    assert rank_stats({(i, j): 0 for i in range(10) for j in range(i)}, n=10_000, nb=1000).mem_dense_mb == 360
    assert rank_stats({}, n=20_000, nb=1000).mem_dense_mb == 1520


def test_tlr_memory_single_tile():
    rep = rank_stats({(1, 0): 100}, n=2000, nb=1000)
    assert rep.memory_bytes_tlr == 2 * 1000 * 100 * 8
    assert rep.mem_tlr_mb == 1.6


def test_statistics_and_flagging(caplog):
    grid = {(1, 0): 3, (2, 0): 60, (2, 1): 9}
    with caplog.at_level(logging.WARNING):
        rep = rank_stats(grid, n=300, nb=100, epsilon=1e-7)
    assert (rep.min, rep.median, rep.mean, rep.max) == (3, 9.0, 24.0, 60)
    assert rep.flagged == [(2, 0)]
    assert "rank >= nb/2" in caplog.text


def test_ragged_memory():
    rep = rank_stats({(1, 0): 2}, n=15, nb=10)
    assert rep.memory_bytes_tlr == 8 * (5 + 10) * 2
    assert rep.memory_bytes_dense == 8 * 5 * 10


def test_report_files(tmp_path):
    rep = rank_stats({(1, 0): 4, (2, 0): 1, (2, 1): 5}, n=30, nb=10, epsilon=1e-7)
    write_rank_heatmap(tmp_path / "h.csv", rep, header="demo")
    assert (tmp_path / "h.csv").read_text().splitlines() == [
        "# demo", "tile_i,tile_j,rank", "1,0,4", "2,0,1", "2,1,5"]
    write_rank_report(tmp_path / "r.json", rep, ordering="hilbert")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert set(doc) == {"n", "nb", "epsilon", "ordering", "min", "median", "mean", "max", "mem_tlr_mb", "mem_dense_mb"}
    assert doc["ordering"] == "hilbert" and doc["max"] == 5


def test_lowrank_shape_check():
    with pytest.raises(InvalidArgument):
        LowRankTile(np.zeros((3, 2)), np.zeros((3, 1)))
