import math
import struct

import numpy as np
import pytest

from tlrgeo.core import (
    BivariateMaternParams,
    FactorizationError,
    InvalidArgument,
    LocationSet,
    MaternParams,
    Permutation,
    TghParams,
    apply_permutation,
    generate_uniform_locations,
    make_rng,
)
from tlrgeo.covgen import (
    TiledDenseMatrix,
    build_covariance,
    dense_cholesky,
    iter_covariance_tiles,
    read_matrix_dump,
    simulate_field,
    write_matrix_dump,
)
from tlrgeo.kernels import bivariate_matern, tgh_transform


def brute_force(locs, nu, beta, sigma2):
    """Entrywise loop using the closed forms for nu = 1/2, 3/2."""
    n = locs.n
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            r = math.dist(locs.coords[i], locs.coords[j]) / beta
            out[i, j] = sigma2 * (math.exp(-r) if nu == 0.5 else (1 + r) * math.exp(-r))
    return out


def test_single_location():
    cov = build_covariance(generate_uniform_locations(1, 0), "matern", MaternParams(3.0, 0.1, 0.7))
    assert cov.to_dense().tolist() == [[3.0]]


def test_two_points_exponential():
    locs = LocationSet(np.array([[0.2, 0.3], [0.3, 0.3]]))
    a = build_covariance(locs, "matern", MaternParams(1, 0.1, 0.5)).to_dense()
    assert a[0, 1] == pytest.approx(math.exp(-1), rel=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.5])
@pytest.mark.parametrize("nb", [1, 2, 3, 5])
def test_matches_brute_force(nu, nb):
    locs = generate_uniform_locations(5, seed=9)
    a = build_covariance(locs, "matern", MaternParams(1.4, 0.3, nu), nb=nb).to_dense()
    assert np.allclose(a, brute_force(locs, nu, 0.3, 1.4), rtol=1e-12, atol=0)


def test_symmetric_diagonal_and_ragged_tiles():
    locs = generate_uniform_locations(23, seed=2)
    cov = build_covariance(locs, "matern", MaternParams(2.0, 0.1, 0.9), nb=7)
    assert cov.nt == 4 and cov.tile(3, 3).shape == (2, 2) and cov.tile(3, 0).shape == (2, 7)
    a = cov.to_dense()
    assert np.array_equal(a, a.T)
    assert np.all(cov.diagonal() == 2.0)
    assert np.array_equal(cov.tile(0, 2), cov.tile(2, 0).T)


def test_tile_size_must_fit():
    locs = generate_uniform_locations(4, seed=2)
    with pytest.raises(InvalidArgument):
        build_covariance(locs, "matern", MaternParams(1, 0.1, 0.5), nb=5)
    with pytest.raises(InvalidArgument):
        build_covariance(locs, "gaussian", MaternParams(1, 0.1, 0.5), nb=2)
    with pytest.raises(InvalidArgument):
        build_covariance(locs, "matern", TghParams(), nb=2)


def test_ordering_equivariance():
    locs = generate_uniform_locations(30, seed=4)
    p = MaternParams(1, 0.2, 0.8)
    perm = Permutation(make_rng(1).permutation(30), "none")
    a = build_covariance(locs, "matern", p, nb=8).to_dense()
    b = build_covariance(apply_permutation(locs, perm), "matern", p, nb=8).to_dense()
    assert np.allclose(b, a[np.ix_(perm.map, perm.map)], rtol=1e-14, atol=0)


def test_threaded_assembly_identical():
    locs = generate_uniform_locations(90, seed=4)
    p = MaternParams(1, 0.2, 0.8)
    a = build_covariance(locs, "matern", p, nb=20).to_dense()
    b = build_covariance(locs, "matern", p, nb=20, threads=3).to_dense()
    assert np.array_equal(a, b)


def test_tiles_stream_lower_triangle():
    locs = generate_uniform_locations(10, seed=4)
    keys = [(i, j) for i, j, _ in iter_covariance_tiles(locs, "matern", MaternParams(1, 0.1, 0.5), nb=4)]
    assert keys == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]


def test_bivariate_layout():
    locs = generate_uniform_locations(6, seed=1)
    p = BivariateMaternParams(1.2, 0.8, 0.15, 0.5, 1.0, 0.4)
    a = build_covariance(locs, "bivariate-matern", p, nb=5).to_dense()
    assert a.shape == (12, 12)
    d = math.dist(locs.coords[1], locs.coords[4])
    assert a[2, 8] == pytest.approx(bivariate_matern(d, 1, 1, p))
    assert a[3, 9] == pytest.approx(bivariate_matern(d, 2, 2, p))
    assert a[2, 9] == pytest.approx(bivariate_matern(d, 1, 2, p))
    assert a[3, 2] == pytest.approx(p.rho12 * 1.2 * 0.8)
    np.linalg.cholesky(a)


def test_dump_roundtrip_and_layout(tmp_path):
    locs = generate_uniform_locations(7, seed=3)
    cov = build_covariance(locs, "matern", MaternParams(1, 0.2, 0.5), nb=3)
    path = tmp_path / "m.bin"
    write_matrix_dump(path, cov)
    raw = path.read_bytes()
    assert struct.unpack_from("<QQ", raw) == (7, 3)
    assert len(raw) == 16 + 8 * 49
    first = np.frombuffer(raw, "<f8", count=9, offset=16).reshape((3, 3), order="F")
    assert np.array_equal(first, cov.tile(0, 0))
    # second tile of the grid is (0, 1), the transpose of stored (1, 0)
    second = np.frombuffer(raw, "<f8", count=9, offset=16 + 72).reshape((3, 3), order="F")
    assert np.array_equal(second, cov.tile(0, 1))
    back = read_matrix_dump(path)
    assert back.n == 7 and back.nb == 3
    assert np.array_equal(back.to_dense(), cov.to_dense())


def test_from_dense_roundtrip():
    a = np.arange(25.0).reshape(5, 5)
    a = a + a.T
    assert np.array_equal(TiledDenseMatrix.from_dense(a, 2).to_dense(), a)


def test_simulate_scalar():
    locs = generate_uniform_locations(1, seed=0)
    z = simulate_field(locs, "matern", MaternParams(4.0, 0.1, 0.5), seed=5)
    w = make_rng(5, 1).standard_normal(1)
    assert z[0] == pytest.approx(2 * w[0], rel=1e-15)


def test_simulate_deterministic():
    locs = generate_uniform_locations(50, seed=0)
    p = MaternParams(1, 0.1, 0.5)
    assert np.array_equal(simulate_field(locs, "matern", p, 3), simulate_field(locs, "matern", p, 3))
    assert not np.array_equal(simulate_field(locs, "matern", p, 3), simulate_field(locs, "matern", p, 4))


def test_simulate_tgh_applies_transform():
    locs = generate_uniform_locations(20, seed=0)
    m, t = MaternParams(1, 0.1, 0.5), TghParams(0.5, 2.0, 0.3, 0.1)
    gauss = simulate_field(locs, "matern", m, 3)
    assert np.allclose(simulate_field(locs, "tgh-matern", (m, t), 3), tgh_transform(gauss, t))
    assert np.array_equal(simulate_field(locs, "tgh-matern", m, 3), gauss)


@pytest.mark.slow
def test_simulate_empirical_covariance():
    locs = generate_uniform_locations(500, seed=12)
    p = MaternParams(1, 0.3, 0.5)
    zs = np.array([simulate_field(locs, "matern", p, s)[:2] for s in range(2000)])
    sigma12 = math.exp(-math.dist(locs.coords[0], locs.coords[1]) / 0.3)
    # for a bivariate normal, var(z1 z2) = 1 + sigma12^2
    se = math.sqrt((1 + sigma12**2) / 2000)
    assert abs(np.mean(zs[:, 0] * zs[:, 1]) - sigma12) < 3 * se


def test_dense_cholesky_reports_pivot():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(FactorizationError) as info:
        dense_cholesky(a)
    assert info.value.pivot == 2
