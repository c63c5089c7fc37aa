import numpy as np
import pytest

from agingecm.kernels import (MaternSpec, WienerVelocitySpec, matern32_cov, matern_cross_cov,
                              matern_cross_cov_dsoc, matern_grid_cov, operating_grid, wv_cov)

# closed-form values, evaluated independently with mpmath at 30 digits
MATERN_D1 = 0.483357724596507651    # (1 + sqrt3) exp(-sqrt3)
MATERN_D2 = 0.139731350192314671    # (1 + 2 sqrt3) exp(-2 sqrt3)


def spec(var=1.0, lz=0.2, li=1.0):
    return MaternSpec(variance=var, lengthscale_soc=lz, lengthscale_current=li)


def test_matern_identity_gives_variance():
    assert matern32_cov((0.3, 0.1), (0.3, 0.1), spec(var=2.5)) == pytest.approx(2.5, abs=1e-15)


def test_matern_unit_scaled_distance():
    got = matern32_cov((0.5, 1.0), (0.3, 1.0), spec())
    assert got == pytest.approx(MATERN_D1, abs=1e-14)


def test_matern_uses_absolute_current():
    s = spec(li=0.5)
    assert matern32_cov((0.4, -0.2), (0.4, 0.2), s) == pytest.approx(s.variance)


def test_matern_decays_monotonically():
    far = [matern32_cov((0.0, 0.0), (z, 0.0), spec(lz=0.1)) for z in np.linspace(0.2, 3.0, 30)]
    assert np.all(np.diff(far) < 0)
    assert far[-1] < 1e-9


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_matern_spec_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        MaternSpec(variance=bad, lengthscale_soc=0.2, lengthscale_current=1.0)
    with pytest.raises(ValueError):
        WienerVelocitySpec(variance=bad)


def test_wv_cov_examples():
    assert wv_cov(1.0, 1.0) == pytest.approx(1 / 3)
    assert wv_cov(1.0, 2.0) == pytest.approx(5 / 6)
    assert wv_cov(2.0, 1.0) == pytest.approx(5 / 6)
    assert wv_cov(0.0, 7.0) == 0.0
    assert wv_cov(3.0, 0.0, variance=4.0) == 0.0
    assert wv_cov(1.0, 2.0, variance=3.0) == pytest.approx(2.5)


def test_wv_cov_rejects_negative_age():
    with pytest.raises(ValueError):
        wv_cov(-1.0, 1.0)


def test_wv_gram_is_psd(rng):
    z = np.sort(rng.uniform(0.1, 50.0, 40))
    K = wv_cov(z[:, None], z[None, :], variance=0.3)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K)[0] > -1e-9 * np.trace(K)


def test_grid_cov_single_point():
    K = matern_grid_cov([[0.5, 0.1]], spec(var=0.7))
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(0.7)


def test_grid_cov_three_points():
    grid = operating_grid(3, 1, (0.0, 0.2))
    K = matern_grid_cov(grid, spec(var=2.0, lz=0.25))
    assert np.allclose(np.diag(K), 2.0)
    assert K[0, 1] == pytest.approx(2.0 * MATERN_D2, rel=1e-12)
    assert K[0, 1] == pytest.approx(K[1, 0])


def test_grid_cov_rejects_duplicates():
    with pytest.raises(ValueError):
        matern_grid_cov([[0.1, 0.0], [0.1, 0.0]], spec())


def test_grid_jitter_is_relative():
    grid = operating_grid(4)
    K0 = matern_grid_cov(grid, spec(var=3.0))
    K1 = matern_grid_cov(grid, spec(var=3.0), jitter=1e-6)
    assert np.allclose(np.diag(K1 - K0), 3e-6)


def test_operating_grid_layout():
    g = operating_grid(3, 2, (0.0, 0.3))
    # SOC-major, current-minor
    assert g.tolist() == [[0.0, 0.0], [0.0, 0.3], [0.5, 0.0], [0.5, 0.3], [1.0, 0.0], [1.0, 0.3]]
    single = operating_grid(5, 1, (0.0, 0.28))
    assert np.allclose(single[:, 1], 0.14)


def test_cross_cov_matches_scalar():
    a = np.array([[0.1, 0.2], [0.7, 0.0]])
    b = np.array([[0.3, 0.1], [0.9, 0.25], [0.0, 0.0]])
    s = spec(var=1.3, lz=0.3, li=0.4)
    K = matern_cross_cov(a, b, s)
    for i in range(2):
        for j in range(3):
            assert K[i, j] == pytest.approx(matern32_cov(a[i], b[j], s), rel=1e-14)


def test_soc_derivative_matches_finite_difference():
    grid = operating_grid(6, 2, (0.0, 0.3))
    s = spec(var=0.8, lz=0.25, li=0.5)
    p = np.array([0.43, 0.12])
    h = 1e-6
    fd = (matern_cross_cov(grid, p + [h, 0], s) - matern_cross_cov(grid, p - [h, 0], s))[:, 0] / (2 * h)
    assert np.allclose(matern_cross_cov_dsoc(grid, p, s)[:, 0], fd, atol=1e-7)
