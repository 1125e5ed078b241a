"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test records a ``CRITERION k: PASS|FAIL ...`` line; the lines are
printed as they happen and collected again in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, a_problem, c_problem
from mraslab import harness
from mraslab.config import from_dict
from mraslab.experiment import run_experiment
from mraslab.forward import (assemble_dfdq, check_max_principle, homogenize, make_problem,
                             solve_forward)
from mraslab.grid import inner_h, make_uniform_grid, norm_h
from mraslab.mras import (AdaptiveConfig, coercivity_constant, exact_data_derivative,
                          predicted_rate, run_mras)
from oracles import manufactured


def record(k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def decay_run():
    """c-problem, q* = 1 + 0.5 sin(pi x), q0 = 1, exact data, horizon 2/omega_pred."""
    spec = homogenize(c_problem(n=99))
    probe = solve_forward(spec, 0.5, 1e-3)
    omega = predicted_rate(spec, coercivity_constant(spec, probe), 1.0)
    T = 2.0 / omega
    t0 = time.perf_counter()
    traj = solve_forward(spec, T, 1e-3)
    cfg = AdaptiveConfig(q0=np.ones(99), q0_lin=np.ones(99), dt=1e-3, T=T, M=1.0)
    run = run_mras(spec, traj, exact_data_derivative(spec, traj), cfg)
    wall = time.perf_counter() - t0
    const = harness.run_constants(spec, cfg, run, traj)
    return spec, cfg, traj, run, const, wall


def test_criterion_1_fixed_point():
    spec = homogenize(c_problem(n=99))
    t0 = time.perf_counter()
    traj = solve_forward(spec, 2.0, 1e-3)
    cfg = AdaptiveConfig(q0=spec.q_star.copy(), q0_lin=spec.q_star.copy(), dt=1e-3, T=2.0)
    run = run_mras(spec, traj, exact_data_derivative(spec, traj), cfg)
    wall = time.perf_counter() - t0
    sup_E = float(np.max(run.diagnostics["E"]))
    bound = 1e-8 * (1.0 + norm_h(spec.q_star, spec.grid) ** 2)
    ok = sup_E <= bound and wall < 5.0
    assert record(1, ok, f"sup E = {sup_E:.3e} <= {bound:.3e}, runtime {wall:.2f} s < 5 s")


def test_criterion_2_energy_decay(decay_run):
    _, cfg, _, run, const, wall = decay_run
    E = run.diagnostics["E"]
    tol = 1e-10 * (1.0 + E[0])
    worst = float(np.max(np.diff(E)))
    ratio = E[-1] / E[0]
    ok = worst <= tol and ratio <= 0.5 and wall < 30.0
    assert record(2, ok, f"max step increase {worst:.3e} <= {tol:.3e}; E(T)/E(0) = {ratio:.3e} <= 0.5 "
                         f"at T = {cfg.T:g} (omega_pred = {const.omega_pred:g}); runtime {wall:.2f} s < 30 s")


def test_criterion_3_exponential_bound(decay_run):
    _, _, _, run, const, _ = decay_run
    E = run.diagnostics["E"]
    t = run.diagnostics.times
    w = const.omega_pred
    ratio = float(np.max(E / (np.exp(-w * t) * E[0])))
    ok = ratio <= 1.1
    assert record(3, ok, f"max E(t) / (exp(-omega_pred t) E(0)) = {ratio:.4f} <= 1.1 "
                         f"(C_coe = {const.C_coe:g}, omega_pred = {w:g})")


def test_criterion_4_integral_bound(decay_run):
    _, _, _, run, const, _ = decay_run
    e = harness.verify_propositions(run.diagnostics, const)["integral bound"]
    rel = e.slack / e.bound
    ok = rel >= -0.1
    assert record(4, ok, f"integral bound lhs {e.measured:.4e} vs rhs {e.bound:.4e}, "
                         f"relative slack {rel:.4f} >= -0.1")


def test_criterion_5_a_coercivity(a_spec, a_traj):
    hs = homogenize(a_spec)
    mp = check_max_principle(a_traj, 1.0, "a", tol=0.0)
    rep = harness.verify_coercivity(hs, a_traj, 100, seed=5, C_coe=1.0, tol=1e-8)
    worst = rep.meta["empirical_C_coe"]
    ok = mp.passed and len(rep.entries) == 100 and worst >= 1.0 - 1e-8
    assert record(5, ok, f"z <= -1 {'holds' if mp.passed else 'violated'}; "
                         f"min quotient over {len(rep.entries)} samples = {worst:.10f} >= 1 - 1e-8")


def test_criterion_6_lipschitz(c_traj):
    spec = homogenize(c_problem(n=99))
    cfg = AdaptiveConfig(q0=np.ones(99), q0_lin=np.ones(99), T=2.0)
    cubic = harness.verify_lipschitz(spec, cfg, c_traj, 100, seed=6)
    margin = min(e.slack for e in cubic.entries)
    lin_spec = homogenize(c_problem(n=99, nonlinearity="c_linear"))
    lin_traj = solve_forward(lin_spec, 0.5, 1e-3)
    lin = harness.verify_lipschitz(lin_spec, cfg, lin_traj, 100, seed=6)
    res = lin.meta["max_residual"]
    ok = cubic.passed and len(cubic.entries) == 100 and res <= 1e-12
    assert record(6, ok, f"cubic preset: 100 quotients <= L, min margin {margin:.3e}; "
                         f"linear preset: max residual {res:.2e} <= 1e-12")


def test_criterion_7_adjoint():
    worst = {}
    rng = np.random.default_rng(7)
    for name, make in (("c", c_problem), ("a", a_problem)):
        spec = homogenize(make(n=99))
        g = spec.grid
        w = 0.0
        for _ in range(100):
            z = spec.u0 + 0.2 * rng.standard_normal(99)
            B = assemble_dfdq(spec, 1 + 0.2 * rng.standard_normal(99), z,
                              z_explicit=z + 0.01 * rng.standard_normal(99))
            dq, v = rng.standard_normal(99), rng.standard_normal(99)
            gap = abs(inner_h(B.apply(dq), v, g) - inner_h(dq, B.adjoint_apply(v), g))
            scale = np.abs(B.dense()).max() * np.linalg.norm(dq) * np.linalg.norm(v) * g.h
            w = max(w, gap / scale)
        worst[name] = w
    ok = all(v <= 1e-12 for v in worst.values())
    assert record(7, ok, f"max |<B dq, v> - <dq, B^T v>| / scale: c {worst['c']:.1e}, "
                         f"a {worst['a']:.1e} <= 1e-12 (100 pairs each)")


def _manufactured_spec(n):
    g = make_uniform_grid(0, 1, n)
    x = g.nodes
    return make_problem("c", g, "c_cubic", q_star=1.0, u0=lambda s: manufactured(s, 0.0)[0],
                        g=lambda t: manufactured(x, t)[1], boundary=(2.0, 2.0), c_lower=1.0)


def _order(a, b, c):
    return math.log2(np.max(np.abs(a - b)) / np.max(np.abs(b - c)))


def test_criterion_8_orders():
    T = 0.5
    fine = {n: solve_forward(_manufactured_spec(n), T, 1e-3).physical()[-1] for n in (49, 99, 199)}
    # nodes of the coarser grids are every 2nd / 4th node of the finer ones
    s_ord = _order(fine[49], fine[99][1::2], fine[199][3::4])
    steps = {dt: solve_forward(_manufactured_spec(99), T, dt).physical()[-1] for dt in (1e-2, 5e-3, 2.5e-3)}
    t_ord = _order(steps[1e-2], steps[5e-3], steps[2.5e-3])
    exact = manufactured(make_uniform_grid(0, 1, 99).nodes, T)[0]
    err = float(np.max(np.abs(steps[2.5e-3] - exact)))
    ok = s_ord >= 1.9 and t_ord >= 0.9
    assert record(8, ok, f"spatial order {s_ord:.3f} >= 1.9 (n = 49, 99, 199); temporal order {t_ord:.3f} "
                         f">= 0.9 (dt = 1e-2, 5e-3, 2.5e-3); max error vs exact at dt = 2.5e-3: {err:.2e}")


NOISY = {"problem": {"preset": "c_cubic", "n": 99}, "adaptive": {"T": 6.0, "dt": 1e-3},
         "noise": {"sp_width": 0.5, "ti_window": 5}, "verify": {"samples": 10, "dual_norms": False},
         "seed": 1}


def test_criterion_9_noisy_plateau(tmp_path):
    plateaus = {}
    for delta in (0.02, 0.01):
        raw = {**NOISY, "noise": {**NOISY["noise"], "delta": delta}}
        res = run_experiment(from_dict(raw), tmp_path / f"d{delta}")
        plateaus[delta] = res.reports["summary"].meta["E_plateau"]
    ratio = plateaus[0.02] / plateaus[0.01]

    base = {"problem": {"preset": "c_cubic", "n": 99}, "adaptive": {"T": 2.0, "dt": 1e-3},
            "verify": {"samples": 5, "dual_norms": False}}
    exact = run_experiment(from_dict(base), tmp_path / "exact")
    clean = run_experiment(from_dict({**base, "noise": {"delta": 0.0}}), tmp_path / "clean")
    gap = float(np.max(np.abs(clean.diagnostics["E"] - exact.diagnostics["E"])))
    ok = 2.0 <= ratio <= 8.0 and gap <= 1e-6
    assert record(9, ok, f"plateau ratio E(0.02)/E(0.01) = {ratio:.3f} in [2, 8] "
                         f"(plateaus {plateaus[0.02]:.3e}, {plateaus[0.01]:.3e}); "
                         f"clean-limit max |E - E_exact| = {gap:.1e} <= 1e-6")


def test_criterion_10_determinism(tmp_path):
    raw = {"problem": {"preset": "c_cubic", "n": 49}, "adaptive": {"T": 1.0, "dt": 1e-3},
           "noise": {"delta": 0.01, "sp_width": 0.5, "ti_window": 3},
           "verify": {"samples": 10, "dual_norms": False}, "seed": 3}
    run_experiment(from_dict(raw), tmp_path / "one")
    run_experiment(from_dict(raw), tmp_path / "two")
    a = (tmp_path / "one" / "diagnostics.csv").read_bytes()
    b = (tmp_path / "two" / "diagnostics.csv").read_bytes()
    ok = a == b and len(a) > 0
    assert record(10, ok, f"diagnostics.csv byte-identical across two runs ({len(a)} bytes)")
