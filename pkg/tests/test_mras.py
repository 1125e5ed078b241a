import numpy as np
import pytest

from conftest import a_problem, c_problem
from mraslab.forward import homogenize, make_problem, solve_forward
from mraslab.grid import make_uniform_grid, norm_h
from mraslab.mras import (AdaptiveConfig, BlowUpError, CausalFeed, LipschitzMode, MrasState, Scheme,
                          SigmaMode, StabilizerMode, coercivity_constant, exact_data_derivative,
                          lipschitz_L, mras_step, predicted_rate, resolve_sigma, run_mras,
                          stabilizer_gamma)


def _cfg(spec, q0=1.0, **kw):
    n = spec.grid.n
    q0 = np.full(n, q0) if np.isscalar(q0) else q0
    kw.setdefault("T", 0.5)
    return AdaptiveConfig(q0=q0, q0_lin=kw.pop("q0_lin", q0), **kw)


def test_stabilizer_examples():
    cfg = AdaptiveConfig(q0=np.ones(3), q0_lin=np.ones(3), C_coe=1.0, M=1.0)
    assert stabilizer_gamma(cfg, 0.0) == 1.0
    assert stabilizer_gamma(cfg, np.sqrt(3.0)) == pytest.approx(2.5)
    simple = AdaptiveConfig(q0=np.ones(3), q0_lin=np.ones(3), C_coe=1.0,
                            stabilizer_mode=StabilizerMode.SIMPLE)
    assert stabilizer_gamma(simple, 2.0) == 3.0
    with pytest.raises(ValueError):
        stabilizer_gamma(AdaptiveConfig(q0=np.ones(3), q0_lin=np.ones(3)), 1.0)


def test_guaranteed_stabilizer_dominates():
    cfg = AdaptiveConfig(q0=np.ones(3), q0_lin=np.ones(3), C_coe=0.7, M=0.3)
    for L in np.linspace(0, 20, 41):
        g = stabilizer_gamma(cfg, L)
        # gamma - M >= L^2/(2 C_coe): Young's inequality absorbs the linearization error
        assert g - cfg.M == pytest.approx(L ** 2 / (2 * cfg.C_coe))


def test_config_validation():
    with pytest.raises(ValueError, match="exceeds horizon"):
        AdaptiveConfig(q0=np.ones(3), q0_lin=np.ones(3), dt=1.0, T=0.5)
    with pytest.raises(ValueError, match="M must"):
        AdaptiveConfig(q0=np.ones(3), q0_lin=np.ones(3), M=0.0)


def test_lipschitz_constant_mode(c_hom):
    cfg = _cfg(c_hom, lipschitz_mode=LipschitzMode.CONSTANT, lipschitz_value=4.0)
    assert lipschitz_L(c_hom, cfg, 123.0) == 4.0


def test_lipschitz_linear_psi_is_zero():
    spec = homogenize(c_problem(n=19, nonlinearity="c_linear"))
    assert lipschitz_L(spec, _cfg(spec), 1.0) == 0.0
    assert resolve_sigma(spec, _cfg(spec)) == 0.0


def test_lipschitz_grows_with_q(c_hom):
    cfg = _cfg(c_hom)
    vals = [lipschitz_L(c_hom, cfg, s) for s in (0.5, 1.0, 2.0, 4.0)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_sigma_auto(c_hom, a_hom):
    assert resolve_sigma(c_hom, _cfg(c_hom)) == 1.0
    assert resolve_sigma(a_hom, _cfg(a_hom)) == 1.0
    assert resolve_sigma(c_hom, _cfg(c_hom, sigma=SigmaMode.FORCE_0)) == 0.0


def test_coercivity_constant_values(c_hom, c_traj, a_hom, a_traj):
    assert coercivity_constant(c_hom, c_traj) == pytest.approx(1.0, abs=1e-12)
    assert coercivity_constant(a_hom, a_traj) == pytest.approx(1.0, abs=1e-12)


def test_predicted_rate(c_hom, a_hom):
    assert predicted_rate(c_hom, 1.0, 1.0) == 1.0
    assert predicted_rate(c_hom, 1.0, 1.0, sigma=0.0) == 0.0
    # gradient-norm constant converts through the embedding constant
    assert predicted_rate(a_hom, 1.0, 100.0) == pytest.approx(np.pi ** 2, rel=1e-3)


def test_fixed_point_is_stationary(c_hom, c_traj):
    cfg = _cfg(c_hom, q0=c_hom.q_star.copy(), C_coe=1.0)
    dz = exact_data_derivative(c_hom, c_traj)
    s = MrasState(0.0, c_hom.q_star.copy(), c_traj.values[0].copy())
    for k in range(20):
        s = mras_step(s, c_traj.values[k + 1], dz.values[k], c_hom.g(s.t + cfg.dt), c_hom, cfg,
                      z_prev=c_traj.values[k])
        assert np.max(np.abs(s.q - c_hom.q_star)) <= 1e-10
        assert np.max(np.abs(s.u - c_traj.values[k + 1])) <= 1e-10


@pytest.mark.parametrize("scheme", [Scheme.EXPLICIT, Scheme.COUPLED])
def test_fixed_point_both_schemes(scheme):
    spec = homogenize(c_problem(n=31))
    traj = solve_forward(spec, 0.3, 1e-3)
    cfg = _cfg(spec, q0=spec.q_star.copy(), T=0.3, C_coe=1.0, scheme=scheme)
    run = run_mras(spec, traj, exact_data_derivative(spec, traj), cfg)
    assert np.max(run.diagnostics["E"]) <= 1e-16


def test_explicit_step_matches_reference_formula():
    spec = homogenize(c_problem(n=15, nonlinearity="c_linear"))
    z = spec.u0 + 0.1 * np.sin(np.arange(15.0))
    dz = np.cos(np.arange(15.0))
    q = spec.q_star + 0.2
    u = z + 0.05
    cfg = _cfg(spec, q0=q, T=1.0, dt=1e-6, C_coe=1.0, scheme=Scheme.EXPLICIT, sigma=SigmaMode.FORCE_1)
    new = mras_step(MrasState(0.0, q, u), z, dz, spec.g(0.0), spec, cfg)
    # first-order expansion of the continuous right-hand side
    from mraslab.forward import assemble_dfdq, f_values
    from mraslab.grid import assemble_laplacian

    lap = assemble_laplacian(spec.grid)
    F = f_values(spec, q, z)
    B = assemble_dfdq(spec, q, z)
    du = spec.g(0.0) - F - new.info["gamma"] * lap.apply(u - z)
    dq = -(dz + F - spec.g(0.0)) + B.adjoint_apply(u - z)
    assert np.allclose((new.u - u) / cfg.dt, du, rtol=1e-3, atol=1e-3 * np.max(np.abs(du)))
    assert np.allclose((new.q - q) / cfg.dt, dq, rtol=1e-5, atol=1e-8)


def test_causal_feed_refuses_future():
    feed = CausalFeed(np.arange(10.0)[:, None], lookahead=1, name="z")
    feed.advance(3)
    assert feed[4][0] == 4.0
    with pytest.raises(AssertionError, match="exceeds lookahead"):
        feed[5]
    assert feed.max_ahead == 1


def test_run_reads_no_future(c_hom, c_traj):
    cfg = _cfg(c_hom, T=0.2)
    run = run_mras(c_hom, c_traj, exact_data_derivative(c_hom, c_traj), cfg)
    assert run.feeds["z"].max_ahead == 0
    assert run.feeds["dz"].max_ahead <= 0


def test_energy_decays_c(c_hom, c_traj):
    cfg = _cfg(c_hom, T=1.0)
    run = run_mras(c_hom, c_traj, exact_data_derivative(c_hom, c_traj), cfg)
    E = run.diagnostics["E"]
    assert np.all(np.diff(E) <= 1e-10 * (1 + E[0]))
    assert E[-1] < 0.6 * E[0]
    assert run.C_coe == pytest.approx(1.0)


def test_energy_decays_a(a_hom, a_traj):
    cfg = _cfg(a_hom, T=1.0)
    run = run_mras(a_hom, a_traj, exact_data_derivative(a_hom, a_traj), cfg)
    E = run.diagnostics["E"]
    assert np.all(np.diff(E) <= 1e-10 * (1 + E[0]))
    assert E[-1] < E[0]


def test_sigma_ablation_stays_finite(c_hom, c_traj):
    for mode in (SigmaMode.FORCE_0, SigmaMode.FORCE_1):
        cfg = _cfg(c_hom, T=0.5, sigma=mode)
        run = run_mras(c_hom, c_traj, exact_data_derivative(c_hom, c_traj), cfg)
        assert np.all(np.isfinite(run.diagnostics["E"]))
        assert run.sigma == (0.0 if mode is SigmaMode.FORCE_0 else 1.0)


def test_linear_psi_sigma_settings_both_stable():
    spec = homogenize(c_problem(n=49, nonlinearity="c_linear"))
    traj = solve_forward(spec, 1.0, 1e-3)
    dz = exact_data_derivative(spec, traj)
    E = {}
    for mode in (SigmaMode.FORCE_0, SigmaMode.FORCE_1):
        run = run_mras(spec, traj, dz, _cfg(spec, T=1.0, sigma=mode))
        E[mode] = run.diagnostics["E"]
        assert np.all(np.diff(E[mode]) <= 1e-10 * (1 + E[mode][0]))
    assert E[SigmaMode.FORCE_1][-1] < E[SigmaMode.FORCE_0][-1]


def test_zero_error_state_feedback_identical_for_linear_psi():
    spec = homogenize(c_problem(n=15, nonlinearity="c_linear"))
    traj = solve_forward(spec, 0.01, 1e-3)
    dz = exact_data_derivative(spec, traj)
    s0 = MrasState(0.0, spec.q_star + 0.3, traj.values[0].copy())
    outs = []
    for mode in (SigmaMode.FORCE_0, SigmaMode.FORCE_1):
        cfg = _cfg(spec, q0=s0.q, T=0.01, sigma=mode, C_coe=1.0)
        outs.append(mras_step(s0, traj.values[1], dz.values[0], spec.g(cfg.dt), spec, cfg,
                              z_prev=traj.values[0]))
    # the state updates agree; only the residual term in the q-update differs
    assert np.allclose(outs[0].u, outs[1].u, atol=1e-14)


def test_blowup_reported_with_partial_run():
    g = make_uniform_grid(0, 1, 9)
    spec = homogenize(make_problem("c", g, "c_cubic", q_star=1.0, u0=1.0, g=10.0, boundary=(1, 1)))
    traj = solve_forward(spec, 1.0, 0.05)
    cfg = AdaptiveConfig(q0=np.full(9, 1e200), q0_lin=np.full(9, 1e200), dt=0.05, T=1.0, C_coe=1.0)
    with pytest.raises(BlowUpError) as info:
        run_mras(spec, traj, exact_data_derivative(spec, traj), cfg)
    partial = info.value.partial
    assert len(partial.diagnostics) >= 1
    assert info.value.step >= 1


def test_run_requires_matching_grid(c_hom, c_traj):
    cfg = _cfg(c_hom, T=0.5, dt=2e-3)
    with pytest.raises(ValueError, match="time grids"):
        run_mras(c_hom, c_traj, exact_data_derivative(c_hom, c_traj), cfg)
    with pytest.raises(ValueError, match="cover"):
        run_mras(c_hom, c_traj, exact_data_derivative(c_hom, c_traj), _cfg(c_hom, T=5.0))


def test_diagnostics_columns(c_hom, c_traj, tmp_path):
    run = run_mras(c_hom, c_traj, exact_data_derivative(c_hom, c_traj), _cfg(c_hom, T=0.05))
    d = run.diagnostics
    assert np.allclose(d["E"], d["err_q_H"] ** 2 + d["err_r_H"] ** 2)
    assert d["err_q_H"][0] == pytest.approx(norm_h(1.0 - c_hom.q_star, c_hom.grid))
    d.write_csv(tmp_path / "d.csv")
    head = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert head == "t,E,err_q_H,err_r_H,err_r_V,gamma,L,sigma"
    with pytest.raises(KeyError):
        d["nope"]
