"""Adaptive identification system: coupled evolution of the parameter estimate
``q`` and the reference state ``u`` driven by the observation ``z``.

The time step from ``t_k`` to ``t_{k+1}`` evaluates the model operator in the
same split form as the forward solver (parameter-bilinear part at the new data
level, nonlinearity at the old one).  With exact data the discrete error
equations for ``r = u - z`` and ``e = q - q*`` then hold with no truncation
residual, and the energy ``|r|^2 + |e|^2`` is nonincreasing step by step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .forward import (ProblemKind, ProblemSpec, StepRejectedError, Trajectory, Tridiag, assemble_dfdq,
                      homogenize, linear_in_q, time_grid, write_rows)
from .grid import assemble_laplacian, embedding_constant, norm_h, norm_v, norm_dual, sup_embedding_factor


class LipschitzMode(enum.Enum):
    FORMULA = "formula"
    CONSTANT = "constant"


class SigmaMode(enum.Enum):
    AUTO = "auto"
    FORCE_0 = "0"
    FORCE_1 = "1"


class StabilizerMode(enum.Enum):
    GUARANTEED = "guaranteed"
    SIMPLE = "simple"


class Scheme(enum.Enum):
    AUTO = "auto"
    EXPLICIT = "explicit"   # q-update explicit, u-solve implicit
    COUPLED = "coupled"     # (u, q) solved together, linear in both


@dataclass
class AdaptiveConfig:
    q0: np.ndarray
    q0_lin: np.ndarray
    dt: float = 1e-3
    T: float = 5.0
    M: float = 1.0
    C_coe: float | None = None
    lipschitz_mode: LipschitzMode = LipschitzMode.FORMULA
    lipschitz_value: float = 0.0
    sigma: SigmaMode = SigmaMode.AUTO
    stabilizer_mode: StabilizerMode = StabilizerMode.GUARANTEED
    scheme: Scheme = Scheme.AUTO

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.q0_lin = np.asarray(self.q0_lin, dtype=float)
        errs = []
        if not self.dt > 0:
            errs.append("dt must be positive")
        elif self.dt > self.T * (1 + 1e-12):
            errs.append("dt exceeds horizon")
        if not self.M > 0:
            errs.append("M must be positive")
        if self.C_coe is not None and not self.C_coe > 0:
            errs.append("C_coe must be positive")
        if self.lipschitz_mode is LipschitzMode.CONSTANT and not self.lipschitz_value >= 0:
            errs.append("Lipschitz constant must be nonnegative")
        if errs:
            raise ValueError("; ".join(errs))


@dataclass
class MrasState:
    t: float
    q: np.ndarray
    u: np.ndarray
    info: dict = field(default_factory=dict)


class BlowUpError(StepRejectedError):
    pass


# ---------------------------------------------------------------- constants

def resolve_sigma(spec: ProblemSpec, cfg: AdaptiveConfig) -> float:
    if cfg.sigma is SigmaMode.FORCE_0:
        return 0.0
    if cfg.sigma is SigmaMode.FORCE_1:
        return 1.0
    span = np.concatenate([spec.q_star, cfg.q0, cfg.q0_lin])
    lo, hi = span.min(), span.max()
    pad = 1.0 + (hi - lo)
    samples = np.linspace(lo - pad, hi + pad, 257)
    return 0.0 if spec.nonlinearity.is_affine_in_q(samples) else 1.0


def uses_v_norm(spec: ProblemSpec) -> bool:
    """The a-problem is coercive in the gradient norm, the c-problem in L2."""
    return spec.kind is ProblemKind.A_PROBLEM


def lipschitz_L(spec: ProblemSpec, cfg: AdaptiveConfig, q_norm_H: float, z=None) -> float:
    """Bound for ``|N(Z,q) - N(Z,q*) - N_q(Z,q0_lin)(q-q*)|_{V*} / |q-q*|``.

    The linear-in-``q`` part of the model cancels exactly, so only the product
    terms contribute.  ``z`` is the homogenized state entering the
    nonlinearity; without it an a-priori state range is used.  The error norm is
    ``H`` for the c-problem and the gradient seminorm for the a-problem.
    """
    if cfg.lipschitz_mode is LipschitzMode.CONSTANT:
        return float(cfg.lipschitz_value)
    g = spec.grid
    ell = g.length
    c_emb = sup_embedding_factor(g)
    if z is None:
        Z = _state_range(spec)
    else:
        Z = np.asarray(z) + spec.h_bar
    total = 0.0
    for t in spec.nonlinearity.terms:
        if t.C_dpsi == 0.0:
            continue
        m_phi = float(np.max(np.abs(t.phi(Z))))
        p = t.beta - 1.0
        S = q_norm_H ** p + norm_h(spec.q_star, g) ** p + norm_h(cfg.q0_lin, g) ** p
        if uses_v_norm(spec):
            if p > 2.0:
                raise ValueError(f"growth exponent beta={t.beta} too large for the bound")
            total += c_emb ** 2 * t.C_dpsi * m_phi * (ell + ell ** ((3.0 - t.beta) / 2.0) * S)
        else:
            if p > 1.0:
                raise ValueError(f"growth exponent beta={t.beta} too large for the bound")
            total += c_emb * t.C_dpsi * m_phi * (math.sqrt(ell) + ell ** ((2.0 - t.beta) / 2.0) * S)
    return total


def _state_range(spec: ProblemSpec) -> np.ndarray:
    from .forward import _a_priori_state_bound

    U = _a_priori_state_bound(spec, np.asarray(spec.g(0.0)))
    lim = spec.c_lower if spec.kind is ProblemKind.C_PROBLEM else -spec.c_lower
    return np.array([U, lim])


def stabilizer_gamma(cfg: AdaptiveConfig, L_val: float, C_coe: float | None = None) -> float:
    if cfg.stabilizer_mode is StabilizerMode.SIMPLE:
        return L_val + 1.0
    c = cfg.C_coe if C_coe is None else C_coe
    if c is None:
        raise ValueError("C_coe unknown; measure it first")
    return L_val ** 2 / (2.0 * c) + cfg.M


def coercivity_constant(spec: ProblemSpec, data: Trajectory) -> float:
    """Rigorous lower bound of the coercivity quotient along the data.

    c-problem: ``<f(q,z)-f(q*,z), e>_H >= min U |e|_H^2`` (product term monotone).
    a-problem: summation by parts gives ``sum_faces (-U_face) (De)^2 / h``,
    bounded below by ``min(-U_face) |e|_V^2``.
    """
    Z = data.physical()
    if spec.kind is ProblemKind.C_PROBLEM:
        return float(Z.min())
    Zext = np.column_stack([np.full(len(data), spec.h_left), Z, np.full(len(data), spec.h_right)])
    return float(np.min(-0.5 * (Zext[:, 1:] + Zext[:, :-1])))


def predicted_rate(spec: ProblemSpec, C_coe: float, M: float, sigma: float = 1.0) -> float:
    """``min{C_coe, 2 M C_VH}`` with ``C_coe`` taken in the H norm.

    Without the residual feedback (``sigma = 0``) the parameter error has no
    guaranteed decay and the rate is zero.
    """
    c_vh = embedding_constant(spec.grid)
    c_h = C_coe * c_vh if uses_v_norm(spec) else C_coe
    return min(sigma * c_h, 2.0 * M * c_vh)


# ---------------------------------------------------------------- streaming

class CausalFeed:
    """Read-only view of a sampled series that refuses reads from the future.

    ``advance(k)`` declares step ``k`` current; reading index ``j`` then
    requires ``j <= k + lookahead``.
    """

    def __init__(self, values: np.ndarray, lookahead: int = 0, name: str = "data"):
        self._values = values
        self.lookahead = int(lookahead)
        self.name = name
        self.current = 0
        self.max_read = -1
        self.max_ahead = -math.inf

    def advance(self, k: int) -> None:
        self.current = k

    def __getitem__(self, j: int) -> np.ndarray:
        if j > self.current + self.lookahead:
            raise AssertionError(f"{self.name}: read index {j} at step {self.current} "
                                 f"exceeds lookahead {self.lookahead}")
        self.max_read = max(self.max_read, j)
        self.max_ahead = max(self.max_ahead, j - self.current)
        return self._values[j]

    def __len__(self):
        return len(self._values)


# ---------------------------------------------------------------- stepping

@dataclass
class _Workspace:
    spec: ProblemSpec
    cfg: AdaptiveConfig
    sigma: float
    C_coe: float
    scheme: Scheme
    lap: object


def _workspace(spec, cfg, sigma=None, C_coe=None) -> _Workspace:
    scheme = cfg.scheme
    if scheme is Scheme.AUTO:
        scheme = Scheme.COUPLED if spec.kind is ProblemKind.A_PROBLEM else Scheme.EXPLICIT
    lap = assemble_laplacian(spec.grid)
    ws = _Workspace(spec, cfg, resolve_sigma(spec, cfg) if sigma is None else sigma,
                    cfg.C_coe if C_coe is None else C_coe, scheme, lap)
    return ws


def mras_step(state: MrasState, z_now, dz_now, g_now, spec: ProblemSpec, cfg: AdaptiveConfig,
              *, z_prev=None, extra_L: float = 0.0, _ws: _Workspace | None = None) -> MrasState:
    """Advance ``(q, u)`` by ``cfg.dt``.

    ``z_now`` is the data at the new time level, ``z_prev`` at the old one
    (defaults to ``z_now``); ``dz_now`` the data derivative over the step.  All
    state arguments are homogenized.  ``extra_L`` inflates the Lipschitz value
    entering the stabilizer (noisy data).
    """
    ws = _ws or _workspace(spec, cfg)
    dt = cfg.dt
    grid = spec.grid
    q, u = state.q, state.u
    z_now = np.asarray(z_now, dtype=float)
    z_prev = z_now if z_prev is None else np.asarray(z_prev, dtype=float)
    Z_prev = z_prev + spec.h_bar
    nl = spec.nonlinearity

    L = lipschitz_L(spec, cfg, norm_h(q, grid), z=z_prev)
    gamma = stabilizer_gamma(cfg, L + extra_L, ws.C_coe)
    step = int(round((state.t + dt) / dt))
    if not (math.isfinite(gamma) and np.all(np.isfinite(q)) and np.all(np.isfinite(u))):
        raise BlowUpError(step, "adaptive system blew up")
    Lin, aff = linear_in_q(spec, spec.extend_state(z_now))
    B = assemble_dfdq(spec, cfg.q0_lin, z_now, z_explicit=z_prev)
    N = nl.value(Z_prev, q)
    Az = ws.lap.apply(z_now)
    sigma = ws.sigma

    if ws.scheme is Scheme.EXPLICIT:
        F = Lin.apply(q) + aff + N
        rhs = u + dt * (g_now - F) + dt * gamma * Az
        if not np.all(np.isfinite(rhs)):
            raise BlowUpError(step, "adaptive system blew up")
        u_new = ws.lap.solve(rhs, scale=dt * gamma, shift=1.0)
        q_new = q - dt * (sigma * (dz_now + F - g_now) - B.adjoint_apply(u_new - z_now))
    else:
        lap = ws.lap
        A_u = Tridiag(dt * gamma * lap.off, 1.0 + dt * gamma * lap.diag, dt * gamma * lap.off)
        Bt = B.T
        ab = _interleaved_banded([[A_u, Lin.scaled(dt)],
                                  [Bt.scaled(-dt), _shift(Lin.scaled(dt * sigma), 1.0)]])
        rhs = np.empty(2 * grid.n)
        rhs[0::2] = u + dt * (g_now - aff - N) + dt * gamma * Az
        rhs[1::2] = q - dt * sigma * (dz_now + aff + N - g_now) - dt * B.adjoint_apply(z_now)
        if not (np.all(np.isfinite(rhs)) and np.all(np.isfinite(ab))):
            raise BlowUpError(step, "adaptive system blew up")
        try:
            sol = linalg.solve_banded((3, 3), ab, rhs, check_finite=False)
        except linalg.LinAlgError:
            raise BlowUpError(step, "singular coupled system") from None
        u_new, q_new = sol[0::2], sol[1::2]

    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(q_new))):
        raise BlowUpError(step, "adaptive system blew up")
    return MrasState(state.t + dt, q_new, u_new, {"gamma": gamma, "L": L, "sigma": sigma})


def _shift(T: Tridiag, c: float) -> Tridiag:
    return Tridiag(T.lower, T.diag + c, T.upper)


def _interleaved_banded(blocks) -> np.ndarray:
    """Banded storage of the 2x2 block-tridiagonal system with unknowns ordered
    ``(u_1, q_1, u_2, q_2, ...)``; the bandwidth is 3 on each side."""
    n = blocks[0][0].diag.size
    ab = np.zeros((7, 2 * n))
    for rb in range(2):
        for cb in range(2):
            T = blocks[rb][cb]
            cols = 2 * np.arange(n) + cb
            ab[3 + rb - cb, cols] += T.diag
            # entry (i, i+1): row 2i+rb, column 2(i+1)+cb
            ab[3 + rb - cb - 2, cols[1:]] += T.upper
            ab[3 + rb - cb + 2, cols[:-1]] += T.lower
    return ab


# ---------------------------------------------------------------- runs

DIAG_COLUMNS = ("t", "E", "err_q_H", "err_r_H", "err_r_V", "gamma", "L", "sigma")


@dataclass
class Diagnostics:
    """Per-step scalar series; row ``k`` describes the state at ``times[k]``."""

    times: np.ndarray
    columns: dict

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"diagnostics have no column {name!r}") from None

    def __contains__(self, name):
        return name in self.columns

    def __len__(self):
        return len(self.times)

    def write_csv(self, path, columns=DIAG_COLUMNS) -> None:
        rows = np.column_stack([self.times if c == "t" else self[c] for c in columns])
        write_rows(path, list(columns), rows)


def exact_data_derivative(spec: ProblemSpec, data: Trajectory) -> Trajectory:
    """``D_t z = g - f(q*, z)`` evaluated in the scheme's split form.

    Row ``k`` belongs to the step ``[t_k, t_{k+1}]``; for data produced by
    :func:`solve_forward` this equals the difference quotient up to rounding.
    """
    spec = homogenize(spec)
    z = data.values
    out = np.empty((len(data) - 1, spec.grid.n))
    from .forward import f_values

    for k in range(len(data) - 1):
        out[k] = spec.g(data.times[k + 1]) - f_values(spec, spec.q_star, z[k + 1], u_explicit=z[k])
    return Trajectory(data.grid, data.times[:-1], out)


@dataclass
class MrasRun:
    q: Trajectory
    u: Trajectory
    diagnostics: Diagnostics
    sigma: float
    C_coe: float
    feeds: dict


def run_mras(spec: ProblemSpec, data: Trajectory, dz, cfg: AdaptiveConfig, *,
             reference: Trajectory | None = None, dz_lookahead: int = 0,
             extra_L=None, C_coe: float | None = None) -> MrasRun:
    """Integrate the adaptive system from ``(q0, u0)`` over the data's time grid.

    ``data`` holds homogenized observations (``len(times)`` rows) and ``dz``
    the derivative for each step (one row fewer), either as a trajectory or as
    a feed object with ``advance``/``__getitem__`` that computes rows on demand.  ``reference`` is the clean
    trajectory used for the error diagnostics (defaults to ``data``).
    ``extra_L[k]`` adds to the Lipschitz value at step ``k``.
    """
    spec = homogenize(spec)
    times = time_grid(cfg.T, cfg.dt)
    K = times.size
    if len(data) < K or len(dz) < K - 1:
        raise ValueError(f"data cover {len(data)} samples, run needs {K}")
    if abs(data.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise ValueError("data and solver time grids differ")
    ref = data if reference is None else reference
    C = cfg.C_coe if C_coe is None else C_coe
    if C is None:
        C = coercivity_constant(spec, ref)
    ws = _workspace(spec, cfg, C_coe=C)
    grid = spec.grid

    z_feed = CausalFeed(data.values, 0, "z")
    dz_feed = CausalFeed(dz.values, dz_lookahead, "dz") if isinstance(dz, Trajectory) else dz
    qs = spec.q_star
    Q = np.empty((K, grid.n))
    U = np.empty((K, grid.n))
    cols = {c: np.empty(K) for c in DIAG_COLUMNS if c != "t"}
    cols["err_q_V"] = np.empty(K)
    cols["dt_r_dual"] = np.full(K, np.nan)
    cols["dt_e_dual"] = np.full(K, np.nan)

    state = MrasState(0.0, cfg.q0.copy(), spec.u0.copy())
    Q[0], U[0] = state.q, state.u
    done = K
    failure = None
    for k in range(K - 1):
        z_feed.advance(k + 1)
        dz_feed.advance(k + 1)
        add = 0.0 if extra_L is None else float(extra_L[k])
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                new = mras_step(state, z_feed[k + 1], dz_feed[k], spec.g(times[k + 1]), spec, cfg,
                                z_prev=z_feed[k], extra_L=add, _ws=ws)
        except BlowUpError as exc:
            failure, done = exc, k + 1
            break
        cols["gamma"][k], cols["L"][k] = new.info["gamma"], new.info["L"]
        state = MrasState(times[k + 1], new.q, new.u)
        Q[k + 1], U[k + 1] = state.q, state.u
    if failure is not None:
        times, Q, U = times[:done], Q[:done], U[:done]
        cols = {c: v[:done] for c, v in cols.items()}
        K = done
    # last row repeats the constants of the final step
    cols["gamma"][-1] = cols["gamma"][-2] if K > 1 else stabilizer_gamma(cfg, 0.0, C)
    cols["L"][-1] = cols["L"][-2] if K > 1 else 0.0
    cols["sigma"][:] = ws.sigma

    R = U - ref.values[:K]
    Eq = Q - qs
    h = grid.h
    # a blown-up partial run may overflow here; inf is the honest value
    with np.errstate(over="ignore", invalid="ignore"):
        cols["err_q_H"][:] = np.sqrt(h * np.sum(Eq ** 2, axis=1))
        cols["err_r_H"][:] = np.sqrt(h * np.sum(R ** 2, axis=1))
        cols["err_r_V"][:] = [norm_v(r, grid) for r in R]
        cols["err_q_V"][:] = [norm_v(e, grid) for e in Eq]
        cols["E"][:] = cols["err_q_H"] ** 2 + cols["err_r_H"] ** 2
        for k in range(K - 1):
            cols["dt_r_dual"][k] = norm_dual((R[k + 1] - R[k]) / cfg.dt, grid)
            cols["dt_e_dual"][k] = norm_dual((Eq[k + 1] - Eq[k]) / cfg.dt, grid)

    diag = Diagnostics(times, cols)
    run = MrasRun(Trajectory(grid, times, Q), Trajectory(grid, times, U, spec.h_bar.copy()),
                  diag, ws.sigma, C, {"z": z_feed, "dz": dz_feed})
    if failure is not None:
        failure.partial = run
        raise failure
    return run
