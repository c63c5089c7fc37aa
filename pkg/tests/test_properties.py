"""Property-based checks of the invariants each module promises."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agingecm.dva import correlate_r0_docv, dvdq_from_discharge, local_poly_derivative
from agingecm.ecm import CellConfig, OcvCurve, coulomb_step, linear_ocv, terminal_voltage
from agingecm.estimator import FilterDiagnostics, JointModel, JointState, ekf_step, kalman_filter_nodes
from agingecm.kernels import MaternSpec, matern32_cov, matern_grid_cov, operating_grid, wv_cov
from agingecm.params import HyperParams
from agingecm.ssm import wv_process_noise, wv_transition

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
pos = st.floats(1e-3, 1e3, allow_nan=False)
ages = arrays(float, st.integers(2, 25), elements=st.floats(0.0, 200.0), unique=True)


@SETTINGS
@given(ages, pos)
def test_wv_gram_symmetric_psd(z, var):
    K = wv_cov(z[:, None], z[None, :], var)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K)[0] >= -1e-9 * max(np.trace(K), 1.0)


@SETTINGS
@given(st.tuples(st.floats(0, 1), st.floats(0, 2)), st.tuples(st.floats(0, 1), st.floats(0, 2)),
       pos, st.floats(0.01, 5), st.floats(0.01, 5))
def test_matern_bounded_and_symmetric(a, b, var, lz, li):
    s = MaternSpec(var, lz, li)
    k = matern32_cov(a, b, s)
    assert 0.0 <= k <= var * (1 + 1e-12)
    assert k == matern32_cov(b, a, s)


@SETTINGS
@given(st.integers(2, 12), st.integers(1, 3), pos, st.floats(0.02, 2), st.floats(0.02, 2))
def test_grid_covariance_is_spd(nz, ni, var, lz, li):
    K = matern_grid_cov(operating_grid(nz, ni, (0.0, 1.0)), MaternSpec(var, lz, li), jitter=1e-8)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K)[0] > 0


@SETTINGS
@given(st.floats(0, 50), st.floats(0, 50), pos)
def test_wv_semigroup(d1, d2, var):
    lhs = wv_transition(d2) @ wv_process_noise(d1, var) @ wv_transition(d2).T + wv_process_noise(d2, var)
    rhs = wv_process_noise(d1 + d2, var)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(rhs).max()))


@SETTINGS
@given(st.lists(st.floats(0.1, 30), min_size=1, max_size=10), st.floats(1e-4, 1.0),
       st.integers(0, 2**31 - 1))
def test_node_filter_never_increases_variance(steps, noise, seed):
    rng = np.random.default_rng(seed)
    times = np.cumsum(steps)
    H = [np.array([[1.0, 0.0]])] * len(times)
    y = [rng.normal(size=1) for _ in times]
    P0 = wv_process_noise(times[0], 0.5)
    means, covs, phi = kalman_filter_nodes(times, H, y, noise, wv_transition,
                                           lambda d: wv_process_noise(d, 0.5), np.zeros(2), P0)
    prior = P0
    for k, P in enumerate(covs):
        if k > 0:
            d = times[k] - times[k - 1]
            prior = wv_transition(d) @ covs[k - 1] @ wv_transition(d).T + wv_process_noise(d, 0.5)
        assert P[0, 0] <= prior[0, 0] + 1e-12
        assert np.linalg.eigvalsh(P)[0] >= -1e-10 * np.trace(P)
    assert np.isfinite(phi)


@SETTINGS
@given(st.floats(0.05, 1.0), st.floats(-0.5, 0.0), st.floats(1.0, 600.0), st.floats(2.9, 4.3),
       st.sampled_from(["joseph", "as_printed"]))
def test_ekf_step_keeps_covariance_valid(z, current, dt, voltage, form):
    from agingecm.estimator import FilterOptions

    cell = CellConfig(1 / 0.28, 0.13, n_soc=5, current_range=(0.0, 0.5))
    model = JointModel(HyperParams(wv_variance=1e-4, noise_var=1e-5), cell, linear_ocv(),
                       FilterOptions(update_form=form))
    m, P = model.initial_gp(20.0)
    x = np.concatenate([[z], m])
    Pj = np.zeros((model.dim, model.dim))
    Pj[0, 0] = 4e-4
    Pj[1:, 1:] = P
    diag = FilterDiagnostics()
    out, e, S, dphi = ekf_step(model, JointState(x, Pj), current, dt, voltage, diag)
    assert S >= model.hp.noise_var
    assert np.max(np.abs(out.P - out.P.T)) <= 1e-10
    assert np.linalg.eigvalsh(out.P)[0] >= -1e-10 * np.trace(out.P)
    assert -0.05 <= out.z <= 1.05


@SETTINGS
@given(st.floats(0.0, 1.0), st.floats(-2, 2), st.floats(1.0, 1e4), st.floats(1.0, 1e4), st.floats(0.5, 20))
def test_coulomb_counting_is_additive(z, current, dt1, dt2, qinv):
    two = coulomb_step(coulomb_step(z, current, dt1, qinv), current, dt2, qinv)
    assert np.isclose(two, coulomb_step(z, current, dt1 + dt2, qinv), rtol=1e-12, atol=1e-12)


@SETTINGS
@given(st.floats(0, 1), st.floats(-2, 2), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_terminal_voltage_affine_in_resistance(z, current, r1, r2):
    ocv = linear_ocv()
    v1 = terminal_voltage(z, current, r1, ocv)
    v2 = terminal_voltage(z, current, r2, ocv)
    assert np.isclose(v2 - v1, (r2 - r1) * current, atol=1e-12)


@SETTINGS
@given(arrays(float, st.integers(3, 30), elements=st.floats(0.001, 0.5)), st.floats(2.5, 3.5))
def test_ocv_invert_roundtrip(steps, v0):
    volts = v0 + np.cumsum(steps)
    soc = np.linspace(0, 1, volts.size)
    c = OcvCurve(soc, volts)
    for z in np.linspace(0.0, 1.0, 7):
        assert abs(c.invert(c(z)) - z) < 1e-9


@SETTINGS
@given(arrays(float, 40, elements=st.floats(0.01, 1.0)), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_local_quadratic_is_exact_on_quadratics(dx, a, b, c):
    x = np.cumsum(dx)
    xs, d = local_poly_derivative(x, a + b * x + c * x * x, 7, 2)
    assert np.allclose(d, b + 2 * c * xs, rtol=1e-6, atol=1e-6 * (1 + abs(b) + abs(c) * x[-1]))


@SETTINGS
@given(st.floats(-1.0, 1.0), st.integers(0, 2**31 - 1))
def test_dvdq_commutes_with_voltage_offset(offset, seed):
    rng = np.random.default_rng(seed)
    cur = np.full(120, -0.02)
    v = 4.0 - np.cumsum(rng.uniform(1e-4, 1e-2, 120))
    a = dvdq_from_discharge(v, cur, 30.0, window=11)
    b = dvdq_from_discharge(v + offset, cur, 30.0, window=11)
    assert np.allclose(a.value, b.value, rtol=1e-8, atol=1e-8 * np.max(np.abs(a.value)))


@SETTINGS
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(-10, 10), st.floats(-10, -0.1),
       st.floats(-10, 10))
def test_pearson_affine_invariance(seed, sa, oa, sb, ob):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(6, 5))
    b = a + rng.normal(size=(6, 5))
    base = correlate_r0_docv(a, b)
    moved = correlate_r0_docv(sa * a + oa, sb * b + ob)
    assert np.allclose(moved, -base, atol=1e-9)


@SETTINGS
@given(arrays(float, 5, elements=st.floats(-12, 4)))
def test_hyperparams_log_roundtrip(theta):
    hp = HyperParams.from_log(theta)
    assert np.allclose(hp.to_log(), theta, rtol=0, atol=1e-12)
