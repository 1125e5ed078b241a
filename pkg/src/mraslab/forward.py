"""The two example problems, their data conditions, and the forward solver.

Both problems are posed on an interval with time-constant Dirichlet data
``h_left``, ``h_right``.  With the affine extension ``hbar`` the state is
split as ``U = u + hbar`` and the model operator reads

* c-problem: ``f(q, u) = -Lap U + q U + N(U, q)``
* a-problem: ``f(q, u) = -div(q grad U) + U Lap q + N(U, q)``

where ``N(U, q) = sum_j phi_j(U) psi_j(q)``.  Because ``hbar`` is discretely
harmonic the source ``g`` is unchanged by the homogenization.  In the
a-problem the coefficient carries known boundary values ``q_left``,
``q_right`` (the error ``q - q*`` vanishes on the boundary).
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg, sparse

from .grid import Grid, ScalarField, _vals, assemble_laplacian
from .report import VerificationReport, check


class StepRejectedError(RuntimeError):
    def __init__(self, step: int, msg: str = "non-finite values"):
        super().__init__(f"step {step}: {msg}")
        self.step = step


# ---------------------------------------------------------------- nonlinearity

def spow(t, p):
    """``|t|**p * t``, odd extension of the power map."""
    t = np.asarray(t, dtype=float)
    return np.abs(t) ** p * t


def _sign_pow(t, p):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sign(t) * np.abs(t) ** p
    return np.where(t == 0.0, 0.0, out)


@dataclass(frozen=True)
class ProductTerm:
    """One product ``phi(U) * psi(q)`` with the growth data used in the bounds.

    ``|phi(s)| <= C_phi (1 + |s|**alpha)``, ``|psi'(t)| <= C_psi (1 + |t|**(beta-1))``
    and ``|psi'(a) - psi'(b)| <= C_dpsi (1 + |a|**(beta-1) + |b|**(beta-1))``.
    ``C_dpsi == 0`` means ``psi`` is affine.
    """

    phi: Callable
    dphi: Callable
    psi: Callable
    dpsi: Callable
    d2psi: Callable
    alpha: float
    beta: float
    C_phi: float
    C_psi: float
    C_dpsi: float
    label: str = ""


@dataclass(frozen=True)
class Nonlinearity:
    terms: tuple = ()
    name: str = "none"

    def value(self, Z, q):
        out = np.zeros(np.broadcast(np.asarray(Z), np.asarray(q)).shape)
        for t in self.terms:
            out = out + t.phi(Z) * t.psi(q)
        return out

    def dq(self, Z, q0):
        """Derivative with respect to the parameter, ``sum phi_j(Z) psi_j'(q0)``."""
        out = np.zeros(np.broadcast(np.asarray(Z), np.asarray(q0)).shape)
        for t in self.terms:
            out = out + t.phi(Z) * t.dpsi(q0)
        return out

    def dz(self, Z, q):
        out = np.zeros(np.broadcast(np.asarray(Z), np.asarray(q)).shape)
        for t in self.terms:
            out = out + t.dphi(Z) * t.psi(q)
        return out

    def is_affine_in_q(self, q_samples) -> bool:
        return all(np.all(t.d2psi(q_samples) == 0.0) for t in self.terms)


_one = lambda t: np.ones_like(np.asarray(t, dtype=float))  # noqa: E731
_zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))  # noqa: E731

_CUBE = dict(phi=lambda s: np.asarray(s, dtype=float) ** 3,
             dphi=lambda s: 3.0 * np.asarray(s, dtype=float) ** 2,
             alpha=3.0, C_phi=1.0)


def c_cubic_nonlinearity() -> Nonlinearity:
    """``U^3 |q|^(2/3) q``; monotone in ``q`` wherever ``U >= 0``."""
    term = ProductTerm(psi=lambda t: spow(t, 2.0 / 3.0),
                       dpsi=lambda t: (5.0 / 3.0) * np.abs(np.asarray(t, dtype=float)) ** (2.0 / 3.0),
                       d2psi=lambda t: (10.0 / 9.0) * _sign_pow(t, -1.0 / 3.0),
                       beta=5.0 / 3.0, C_psi=5.0 / 3.0, C_dpsi=5.0 / 3.0,
                       label="U^3 |q|^(2/3) q", **_CUBE)
    return Nonlinearity((term,), "c_cubic")


def a_cubic_nonlinearity() -> Nonlinearity:
    """``U^3 - U |q|^(4/3) q`` split into two products."""
    cube = ProductTerm(psi=_one, dpsi=_zero, d2psi=_zero, beta=1.0, C_psi=1.0,
                       C_dpsi=0.0, label="U^3", **_CUBE)
    cross = ProductTerm(phi=lambda s: -np.asarray(s, dtype=float),
                        dphi=lambda s: -np.ones_like(np.asarray(s, dtype=float)),
                        psi=lambda t: spow(t, 4.0 / 3.0),
                        dpsi=lambda t: (7.0 / 3.0) * np.abs(np.asarray(t, dtype=float)) ** (4.0 / 3.0),
                        d2psi=lambda t: (28.0 / 9.0) * _sign_pow(t, 1.0 / 3.0),
                        alpha=1.0, beta=7.0 / 3.0, C_phi=1.0, C_psi=7.0 / 3.0,
                        C_dpsi=7.0 / 3.0, label="-U |q|^(4/3) q")
    return Nonlinearity((cube, cross), "a_cubic")


def c_linear_nonlinearity() -> Nonlinearity:
    """``U^3 q``: nonlinear in the state, linear in the parameter."""
    term = ProductTerm(psi=lambda t: np.asarray(t, dtype=float), dpsi=_one, d2psi=_zero,
                       beta=1.0, C_psi=1.0, C_dpsi=0.0, label="U^3 q", **_CUBE)
    return Nonlinearity((term,), "c_linear")


NONLINEARITIES = {
    "c_cubic": c_cubic_nonlinearity,
    "a_cubic": a_cubic_nonlinearity,
    "c_linear": c_linear_nonlinearity,
    "none": Nonlinearity,
}


# ---------------------------------------------------------------- problems

class ProblemKind(enum.Enum):
    C_PROBLEM = "c"
    A_PROBLEM = "a"


Source = Callable[[float], np.ndarray]


def constant_source(grid: Grid, value) -> Source:
    vals = np.broadcast_to(np.asarray(value, dtype=float), (grid.n,)).copy()
    vals.setflags(write=False)

    def g(t):
        return vals

    g.label = f"const {float(vals[0]) if np.all(vals == vals[0]) else 'field'}"
    g.is_constant = True
    return g


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    kind: ProblemKind
    grid: Grid
    nonlinearity: Nonlinearity
    q_star: np.ndarray
    u0: np.ndarray
    g: Source
    h_left: float
    h_right: float
    c_lower: float
    q_left: float = 0.0
    q_right: float = 0.0
    homogenized: bool = False
    label: str = ""

    def __post_init__(self):
        n = self.grid.n
        for name in ("q_star", "u0"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be {n} finite interior values")
            object.__setattr__(self, name, v)
        if not self.c_lower > 0:
            raise ValueError("c_lower must be positive")

    @property
    def h_bar(self) -> np.ndarray:
        g = self.grid
        s = (g.nodes - g.a) / g.length
        return self.h_left + (self.h_right - self.h_left) * s

    def extend_state(self, u) -> np.ndarray:
        """``U = u + hbar`` with the Dirichlet values appended at both ends."""
        return np.concatenate(([self.h_left], np.asarray(u) + self.h_bar, [self.h_right]))

    def extend_coef(self, q) -> np.ndarray:
        return np.concatenate(([self.q_left], np.asarray(q), [self.q_right]))

    def physical_u0(self) -> np.ndarray:
        return self.u0 + self.h_bar if self.homogenized else self.u0


def make_problem(kind, grid: Grid, nonlinearity, *, q_star, u0, g, boundary=(0.0, 0.0),
                 c_lower=1.0, label="") -> ProblemSpec:
    """Build a spec; ``q_star``/``u0`` may be callables of ``x`` or constants, ``g`` a
    callable of ``t`` returning interior values, or a constant."""
    kind = ProblemKind(kind) if not isinstance(kind, ProblemKind) else kind
    if isinstance(nonlinearity, str):
        nonlinearity = NONLINEARITIES[nonlinearity]()

    def at(f, x):
        return np.broadcast_to(np.asarray(f(x) if callable(f) else f, dtype=float), np.shape(x)).copy()

    x = grid.nodes
    qs = at(q_star, x)
    ql, qr = float(at(q_star, np.array([grid.a]))[0]), float(at(q_star, np.array([grid.b]))[0])
    if not callable(g):
        g = constant_source(grid, g)
    return ProblemSpec(kind, grid, nonlinearity, qs, at(u0, x), g, float(boundary[0]),
                       float(boundary[1]), float(c_lower), ql, qr, False, label)


def homogenize(spec: ProblemSpec) -> ProblemSpec:
    """Shift to zero Dirichlet data: ``u0 -> u0 - hbar``.

    The model operator already evaluates every state argument at ``u + hbar``,
    and the affine ``hbar`` satisfies ``Lap_h hbar = 0`` and ``D_t hbar = 0``, so
    ``g`` is kept as is.
    """
    if spec.homogenized:
        return spec
    return dataclasses.replace(spec, u0=spec.u0 - spec.h_bar, homogenized=True)


# ---------------------------------------------------------------- operators

@dataclass
class Tridiag:
    """Tridiagonal operator on interior nodes; adjoint in ``<.,.>_H`` is the transpose."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    @classmethod
    def diagonal(cls, d) -> "Tridiag":
        d = np.asarray(d, dtype=float)
        z = np.zeros(max(d.size - 1, 0))
        return cls(z, d, z.copy())

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        out = self.diag * v
        out[1:] += self.lower * v[:-1]
        out[:-1] += self.upper * v[1:]
        return out

    def adjoint_apply(self, v):
        v = np.asarray(v, dtype=float)
        out = self.diag * v
        out[1:] += self.upper * v[:-1]
        out[:-1] += self.lower * v[1:]
        return out

    __call__ = apply

    @property
    def T(self) -> "Tridiag":
        return Tridiag(self.upper.copy(), self.diag.copy(), self.lower.copy())

    def scaled(self, s: float) -> "Tridiag":
        return Tridiag(s * self.lower, s * self.diag, s * self.upper)

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)

    def sparse(self):
        n = self.diag.size
        if n == 1:
            return sparse.csr_matrix(self.diag.reshape(1, 1))
        return sparse.diags([self.lower, self.diag, self.upper], [-1, 0, 1], format="csr")

    def banded(self, shift=0.0) -> np.ndarray:
        ab = np.zeros((3, self.diag.size))
        ab[0, 1:] = self.upper
        ab[1] = self.diag + shift
        ab[2, :-1] = self.lower
        return ab

    def solve(self, rhs, shift=0.0):
        return linalg.solve_banded((1, 1), self.banded(shift), np.asarray(rhs, dtype=float))


def linear_in_q(spec: ProblemSpec, Z_ext: np.ndarray) -> tuple[Tridiag, np.ndarray]:
    """Split the parameter-linear part of ``f``: ``f_lin(q) = Lin q + aff``.

    ``Z_ext`` is the full state with boundary values (length n+2).  For the
    a-problem the faces use arithmetic means of ``q`` and ``U Lap_h q`` uses the
    3-point stencil; the boundary values of ``q`` go into ``aff``.
    """
    h2 = spec.grid.h ** 2
    Zi = Z_ext[1:-1]
    lap_Z = (2.0 * Zi - Z_ext[:-2] - Z_ext[2:]) / h2
    if spec.kind is ProblemKind.C_PROBLEM:
        return Tridiag.diagonal(Zi), lap_Z
    dzp = Z_ext[2:] - Zi       # U_{i+1} - U_i
    dzm = Zi - Z_ext[:-2]      # U_i - U_{i-1}
    up = (-dzp / 2.0 + Zi) / h2
    lo = (dzm / 2.0 + Zi) / h2
    main = (-dzp / 2.0 + dzm / 2.0 - 2.0 * Zi) / h2
    aff = np.zeros_like(Zi)
    aff[0] += lo[0] * spec.q_left
    aff[-1] += up[-1] * spec.q_right
    return Tridiag(lo[1:].copy(), main, up[:-1].copy()), aff


def f_values(spec: ProblemSpec, q, u, u_explicit=None) -> np.ndarray:
    """Array kernel of :func:`nemytskii_f`.

    ``u_explicit``, when given, is the state fed to the nonlinearity while the
    parameter-bilinear terms use ``u``; the time integrators use this to keep
    the discrete error equations exact.
    """
    q = np.asarray(q, dtype=float)
    Z_ext = spec.extend_state(u)
    Lin, aff = linear_in_q(spec, Z_ext)
    Z_nl = Z_ext[1:-1] if u_explicit is None else np.asarray(u_explicit) + spec.h_bar
    return Lin.apply(q) + aff + spec.nonlinearity.value(Z_nl, q)


def nemytskii_f(spec: ProblemSpec, q, u) -> ScalarField:
    return ScalarField(spec.grid, f_values(spec, _vals(q), _vals(u)))


def assemble_dfdq(spec: ProblemSpec, q0_lin, z_sample, z_explicit=None) -> Tridiag:
    """Linearization of ``q -> f(q, z)`` at ``q0_lin`` acting on perturbations that vanish
    on the boundary.  C: diagonal ``U + N_q``; A: tridiagonal."""
    Z_ext = spec.extend_state(_vals(z_sample))
    Lin, _ = linear_in_q(spec, Z_ext)
    Z_nl = Z_ext[1:-1] if z_explicit is None else np.asarray(_vals(z_explicit)) + spec.h_bar
    Lin.diag = Lin.diag + spec.nonlinearity.dq(Z_nl, np.asarray(_vals(q0_lin), dtype=float))
    return Lin


def state_operator(spec: ProblemSpec) -> tuple[Tridiag, np.ndarray]:
    """Linear part of ``u -> f(q*, u)`` (frozen exact coefficient) and its constant term."""
    h2 = spec.grid.h ** 2
    qs = spec.q_star
    if spec.kind is ProblemKind.C_PROBLEM:
        lap = assemble_laplacian(spec.grid)
        K = Tridiag(lap.off.copy(), lap.diag + qs, lap.off.copy())
    else:
        qe = spec.extend_coef(qs)
        faces = 0.5 * (qe[:-1] + qe[1:])
        lap_q = (qe[2:] - 2.0 * qe[1:-1] + qe[:-2]) / h2
        K = Tridiag(-faces[1:-1] / h2, (faces[:-1] + faces[1:]) / h2 + lap_q, -faces[1:-1] / h2)
    Lin, aff = linear_in_q(spec, spec.extend_state(np.zeros(spec.grid.n)))
    return K, Lin.apply(qs) + aff


# ---------------------------------------------------------------- trajectories

@dataclass
class Trajectory:
    """Snapshots ``values[k]`` at ``times[k] = k*dt``; ``shift`` (if any) maps the
    stored homogenized values back to the physical state."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    shift: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.size, self.grid.n):
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"{self.times.size} times x {self.grid.n} nodes")
        if self.times.size == 0 or self.times[0] != 0.0:
            raise ValueError("trajectory must start at t=0")
        if self.times.size > 1:
            k = np.arange(self.times.size)
            if np.max(np.abs(self.times - k * self.dt)) > 1e-14 * max(self.times[-1], 1.0):
                raise ValueError("time grid is not uniform")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def __len__(self):
        return self.times.size

    def snapshot(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[k])

    def physical(self) -> np.ndarray:
        return self.values if self.shift is None else self.values + self.shift

    def save(self, directory, meta: dict | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        info = {"grid": self.grid.to_json(), "dt": self.dt, "T": float(self.times[-1]),
                "steps": int(self.times.size - 1)}
        if self.shift is not None:
            info["shift"] = [float(v) for v in self.shift]
        info.update(meta or {})
        (d / "meta.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
        write_rows(d / "snapshots.csv", ["t"] + [f"x{i}" for i in range(1, self.grid.n + 1)],
                   np.column_stack([self.times, self.values]))

    @classmethod
    def load(cls, directory) -> "Trajectory":
        d = Path(directory)
        info = json.loads((d / "meta.json").read_text())
        data = np.loadtxt(d / "snapshots.csv", delimiter=",", skiprows=1, ndmin=2)
        shift = np.asarray(info["shift"]) if "shift" in info else None
        k = np.arange(data.shape[0])
        return cls(Grid.from_json(info["grid"]), k * info["dt"], data[:, 1:], shift)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.atleast_2d(rows):
            w.writerow([f"{v:.17g}" for v in row])


def spec_hash(spec: ProblemSpec) -> str:
    h = hashlib.sha256()
    desc = {"kind": spec.kind.value, "grid": spec.grid.to_json(),
            "nonlinearity": spec.nonlinearity.name, "h": [spec.h_left, spec.h_right],
            "q_bc": [spec.q_left, spec.q_right], "c_lower": spec.c_lower,
            "g": getattr(spec.g, "label", repr(spec.g)), "homogenized": spec.homogenized}
    h.update(json.dumps(desc, sort_keys=True).encode())
    h.update(spec.q_star.tobytes())
    h.update(spec.u0.tobytes())
    h.update(np.asarray(spec.g(0.0), dtype=float).tobytes())
    return h.hexdigest()[:16]


def time_grid(T: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt * (1 - 1e-12):
        raise ValueError("dt exceeds horizon")
    steps = int(round(T / dt))
    return np.arange(steps + 1) * dt


# ---------------------------------------------------------------- forward solve

def solve_forward(spec: ProblemSpec, T: float, dt: float) -> Trajectory:
    """First-order IMEX: the state-linear part of ``f(q*, .)`` implicit, ``N`` explicit.

    One step reads ``(I + dt K) z_{k+1} = z_k + dt (g(t_{k+1}) - c - N(z_k + hbar, q*))``,
    i.e. ``(z_{k+1} - z_k)/dt = g(t_{k+1}) - f(q*, z_{k+1}; z_k)`` with the split
    evaluation of :func:`f_values`.
    """
    spec = homogenize(spec)
    times = time_grid(T, dt)
    K, c = state_operator(spec)
    ab = K.scaled(dt).banded(shift=1.0)
    hb, qs, nl = spec.h_bar, spec.q_star, spec.nonlinearity
    z = np.empty((times.size, spec.grid.n))
    z[0] = spec.u0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(times.size - 1):
            rhs = z[k] + dt * (spec.g(times[k + 1]) - c - nl.value(z[k] + hb, qs))
            if not np.all(np.isfinite(rhs)):
                raise StepRejectedError(k + 1)
            z[k + 1] = linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
            if not np.all(np.isfinite(z[k + 1])):
                raise StepRejectedError(k + 1)
    Z = z + hb
    return Trajectory(spec.grid, times, z, hb.copy(),
                      {"min_state": Z.min(axis=1), "max_state": Z.max(axis=1)})


def data_derivative(traj: Trajectory) -> Trajectory:
    """Difference quotients ``(z_{k+1} - z_k)/dt``; row ``k`` belongs to ``[t_k, t_{k+1}]``."""
    return Trajectory(traj.grid, traj.times[:-1], np.diff(traj.values, axis=0) / traj.dt)


# ---------------------------------------------------------------- data checks

def check_max_principle(traj: Trajectory, c_lower: float, kind, tol: float = 1e-6) -> VerificationReport:
    kind = ProblemKind(kind) if not isinstance(kind, ProblemKind) else kind
    Z = traj.physical()
    rep = VerificationReport()
    if kind is ProblemKind.C_PROBLEM:
        k, i = np.unravel_index(np.argmin(Z), Z.shape)
        rep.add(check("min state >= c_lower", Z[k, i], c_lower, sense=">=", tol=tol,
                      location=(float(traj.times[k]), float(traj.grid.nodes[i]))))
    else:
        k, i = np.unravel_index(np.argmax(Z), Z.shape)
        rep.add(check("max state <= -c_lower", Z[k, i], -c_lower, sense="<=", tol=tol,
                      location=(float(traj.times[k]), float(traj.grid.nodes[i]))))
    return rep


def _a_priori_state_bound(spec: ProblemSpec, g_samples: np.ndarray) -> float:
    """Constant super-/subsolution: a level the exact state cannot cross.

    c-problem: smallest ``U >= max(u0, h)`` with ``q* U + N(U, q*) >= g``;
    a-problem: largest ``U <= min(u0, h)`` with ``U Lap q* + N(U, q*) <= g``.
    """
    qs, nl = spec.q_star, spec.nonlinearity
    u0 = spec.physical_u0()
    if spec.kind is ProblemKind.C_PROBLEM:
        def ok(U):
            return np.all(qs * U + nl.value(U, qs) >= g_samples)
        lo = max(u0.max(), spec.h_left, spec.h_right)
        sgn = 1.0
    else:
        qe = spec.extend_coef(qs)
        lap_q = (qe[2:] - 2 * qe[1:-1] + qe[:-2]) / spec.grid.h ** 2

        def ok(U):
            return np.all(U * lap_q + nl.value(U, qs) <= g_samples)
        lo = min(u0.min(), spec.h_left, spec.h_right)
        sgn = -1.0
    if ok(lo):
        return lo
    step = max(abs(lo), 1.0)
    hi = lo + sgn * step
    while not ok(hi):
        step *= 2.0
        hi = lo + sgn * step
        if step > 1e12:
            raise ValueError("no constant comparison state found; data conditions cannot hold")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def validate_problem(spec: ProblemSpec, traj: Trajectory | None = None, *, horizon: float = 1.0,
                     n_q: int = 41, tol: float = 1e-9) -> VerificationReport:
    """Check the maximum-principle data conditions and the structural assumptions.

    The bound ``M = max |N(U, q*)|`` uses the realized state range of ``traj``
    when given, otherwise the range certified by a constant comparison state.
    """
    g = spec.grid
    c = spec.c_lower
    nl = spec.nonlinearity
    qs = spec.q_star
    u0 = spec.physical_u0()
    ts = traj.times if traj is not None else np.linspace(0.0, horizon, 11)
    if traj is not None and traj.times.size > 51:
        ts = traj.times[np.linspace(0, traj.times.size - 1, 51).astype(int)]
    G = np.array([spec.g(t) for t in ts])
    rep = VerificationReport()

    if traj is not None:
        Z = traj.physical()
        z_lo, z_hi = float(Z.min()), float(Z.max())
        M = float(np.max(np.abs(nl.value(Z, qs[None, :])))) if nl.terms else 0.0
        rep.meta["state_range_source"] = "trajectory"
    else:
        U = _a_priori_state_bound(spec, G)
        if spec.kind is ProblemKind.C_PROBLEM:
            z_lo, z_hi = c, U
        else:
            z_lo, z_hi = U, -c
        levels = np.linspace(z_lo, z_hi, 201)[:, None]
        M = float(np.max(np.abs(nl.value(levels, qs[None, :])))) if nl.terms else 0.0
        rep.meta["state_range_source"] = "comparison state"
    rep.meta.update(state_min=z_lo, state_max=z_hi, M_N=M)

    if spec.kind is ProblemKind.C_PROBLEM:
        rep.add(check("u0 >= c_lower", u0.min(), c, sense=">=", tol=tol,
                      location=float(g.nodes[np.argmin(u0)])))
        rep.add(check("boundary >= c_lower", min(spec.h_left, spec.h_right), c, sense=">=", tol=tol))
        margin = G - qs * c
        k, i = np.unravel_index(np.argmin(margin), margin.shape)
        rep.add(check("g >= q* c_lower + M_z M_q*", margin[k, i], M, sense=">=",
                      tol=tol * max(1.0, M), location=(float(ts[k]), float(g.nodes[i]))))
    else:
        qe = spec.extend_coef(qs)
        lap_q = (qe[2:] - 2 * qe[1:-1] + qe[:-2]) / g.h ** 2
        rep.add(check("u0 <= -c_lower", u0.max(), -c, tol=tol, location=float(g.nodes[np.argmax(u0)])))
        rep.add(check("boundary <= -c_lower", max(spec.h_left, spec.h_right), -c, tol=tol,
                      note="comparison argument needs h + c_lower <= 0"))
        rep.add(check("q* > 0", min(qs.min(), spec.q_left, spec.q_right), 0.0, sense=">=",
                      tol=0.0))
        rep.add(check("Lap q* bounded", float(np.max(np.abs(lap_q))), math.inf, advisory=True))
        margin = G + c * lap_q
        k, i = np.unravel_index(np.argmax(margin), margin.shape)
        rep.add(check("g <= -c_lower Lap q* - M_z M_q*", margin[k, i], -M,
                      tol=tol * max(1.0, M), location=(float(ts[k]), float(g.nodes[i]))))

    # monotonicity of q -> N(U, q) on the realized state range and a box around q*
    if nl.terms:
        q_lo = min(0.0, qs.min()) - 0.5 * (np.ptp(qs) + 1.0)
        q_hi = qs.max() + 0.5 * (np.ptp(qs) + 1.0)
        if spec.kind is ProblemKind.A_PROBLEM:
            q_lo = 0.0
        Qs = np.linspace(q_lo, q_hi, n_q)
        Us = np.linspace(z_lo, z_hi, 21)[:, None]
        incr = np.diff(nl.value(Us, Qs[None, :]), axis=1)
        scale = max(1.0, float(np.max(np.abs(nl.value(Us, Qs[None, :])))))
        j = np.unravel_index(np.argmin(incr), incr.shape)
        rep.add(check("N(U, .) monotone in q", incr[j], 0.0, sense=">=", tol=1e-12 * scale,
                      location=(float(Us[j[0], 0]), float(Qs[j[1]]))))
        s = np.linspace(-max(abs(z_lo), abs(z_hi)) * 2, max(abs(z_lo), abs(z_hi)) * 2, 401)
        ts_q = np.linspace(-2 * abs(Qs).max(), 2 * abs(Qs).max(), 401)
        for t in nl.terms:
            phi_ratio = np.max(np.abs(t.phi(s)) - t.C_phi * (1 + np.abs(s) ** t.alpha))
            rep.add(check(f"phi growth [{t.label}]", phi_ratio, 0.0, tol=1e-12, advisory=True))
            psi_ratio = np.max(np.abs(t.dpsi(ts_q)) - t.C_psi * (1 + np.abs(ts_q) ** (t.beta - 1)))
            rep.add(check(f"psi' growth [{t.label}]", psi_ratio, 0.0, tol=1e-12, advisory=True))
            beta_max = 5.0 / 3.0 if spec.kind is ProblemKind.C_PROBLEM else 7.0 / 3.0
            rep.add(check(f"beta range [{t.label}]", t.beta, beta_max, tol=1e-12, advisory=True,
                          note="3-D embedding constraint; not binding in 1-D"))
    return rep
