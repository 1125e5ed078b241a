"""Noisy observations and the two regularizers applied before they enter the
adaptive system: a Gaussian mollifier in space and a moving average in time
followed by a difference quotient."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .forward import Trajectory
from .grid import ScalarField, _vals, norm_h, norm_v


class WindowTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    delta: float = 0.0
    p: float = 2.0
    seed: int = 0
    sp_width: float = 0.0
    ti_window: int = 1
    sp_boundary: str = "zero"

    def __post_init__(self):
        errs = []
        if self.sp_boundary not in ("zero", "odd"):
            errs.append("sp_boundary must be 'zero' or 'odd'")
        if not self.delta >= 0:
            errs.append("delta must be nonnegative")
        if not self.p >= 2:
            errs.append("p must be at least 2")
        if not self.sp_width >= 0:
            errs.append("sp_width must be nonnegative")
        if int(self.ti_window) != self.ti_window or self.ti_window < 1 or self.ti_window % 2 == 0:
            errs.append("ti_window must be an odd positive integer")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def lookahead(self) -> int:
        return (int(self.ti_window) - 1) // 2


def lp_time_norm(series, dt: float, p: float = 2.0) -> float:
    """Left-endpoint ``(sum_k dt |s_k|^p)^(1/p)`` over all but the last sample."""
    s = np.abs(np.asarray(series, dtype=float))[:-1]
    return float((dt * np.sum(s ** p)) ** (1.0 / p))


def noise_norm(perturbation: np.ndarray, grid, dt: float, p: float = 2.0) -> float:
    return lp_time_norm([norm_h(row, grid) for row in perturbation], dt, p)


def add_noise(clean: Trajectory, cfg: NoiseConfig) -> Trajectory:
    if cfg.delta == 0.0 or len(clean) < 2:
        return Trajectory(clean.grid, clean.times.copy(), clean.values.copy(), clean.shift)
    rng = np.random.default_rng(cfg.seed)
    pert = rng.standard_normal(clean.values.shape)
    pert *= cfg.delta / noise_norm(pert, clean.grid, clean.dt, cfg.p)
    return Trajectory(clean.grid, clean.times.copy(), clean.values + pert, clean.shift)


def gaussian_kernel(width: float) -> np.ndarray:
    radius = int(math.ceil(4.0 * width))
    j = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (j / width) ** 2)
    return w / w.sum()


def _odd_extension(v: np.ndarray, r: int) -> np.ndarray:
    # antisymmetric about both boundary nodes, hence periodic with period 2(n+1)
    n = v.size
    period = np.concatenate([[0.0], v, [0.0], -v[::-1]])
    return period.take(np.arange(-r, n + 2 + r), mode="wrap")


def smooth_spatial(sample, cfg: NoiseConfig):
    """Gaussian mollifier; accepts a field or a bare array.

    Ghost values beyond the boundary are zero by default.  ``sp_boundary="odd"``
    extends antisymmetrically instead, which keeps linear profiles through the
    boundary intact and removes most of the smoothing bias there.
    """
    v = np.asarray(_vals(sample), dtype=float)
    if cfg.sp_width == 0:
        out = v.copy()
    elif cfg.sp_boundary == "zero":
        out = ndimage.convolve1d(v, gaussian_kernel(cfg.sp_width), mode="constant", cval=0.0)
    else:
        k = gaussian_kernel(cfg.sp_width)
        r = k.size // 2
        out = np.convolve(_odd_extension(v, r), k, mode="valid")[1:-1]
    return ScalarField(sample.grid, out) if isinstance(sample, ScalarField) else out


def _reflect(m: np.ndarray, K: int) -> np.ndarray:
    # half-sample symmetric: ... s1 s0 | s0 s1 ... s_{K-1} | s_{K-1} s_{K-2} ...
    m = np.where(m < 0, -m - 1, m)
    return np.where(m >= K, 2 * K - m - 1, m)


def _window_indices(j, K: int, half: int) -> np.ndarray:
    """Reflected sample indices of the averaging window centered at ``j``."""
    offs = np.arange(-half, half + 1)
    return _reflect(np.asarray(j)[..., None] + offs, K)


@dataclass
class SmoothedData:
    z_reg: Trajectory
    dz_reg: Trajectory
    delta_sp: np.ndarray | None = None
    delta_ti: float | None = None
    latency: int = 0

    def write(self, directory) -> None:
        from pathlib import Path
        import json

        from .forward import write_rows

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        if self.delta_sp is not None:
            write_rows(d / "delta_sp.csv", ["t", "value"], np.column_stack([self.z_reg.times, self.delta_sp]))
        meta_path = d / "meta.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        meta["delta_ti"] = self.delta_ti
        meta["latency_steps"] = self.latency
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def smooth_temporal(noisy: Trajectory, cfg: NoiseConfig, clean: Trajectory | None = None) -> SmoothedData:
    """Spatial mollifier per sample, then a centered moving average in time and the
    difference quotient ``(R_{k+1} - R_k)/dt`` on each step.

    With ``clean`` given, the discrepancies ``|z_reg(t) - z(t)|_V`` and the
    ``L^p(H)`` distance of the derivative estimate from the clean difference
    quotient are measured.
    """
    K = len(noisy)
    w = int(cfg.ti_window)
    if w > K:
        raise WindowTooLargeError(f"ti_window={w} exceeds trajectory length {K}")
    S = np.array([smooth_spatial(row, cfg) for row in noisy.values]).reshape(noisy.values.shape)
    idx = _window_indices(np.arange(K), K, cfg.lookahead)
    R = S[idx[:, 0]].copy()
    for m in range(1, w):
        R += S[idx[:, m]]
    R /= w
    dt = noisy.dt
    dz = (R[1:] - R[:-1]) / dt
    z_reg = Trajectory(noisy.grid, noisy.times.copy(), S, noisy.shift)
    out = SmoothedData(z_reg, Trajectory(noisy.grid, noisy.times[:-1].copy(), dz), latency=cfg.lookahead)
    if clean is not None:
        g = noisy.grid
        out.delta_sp = np.array([norm_v(a - b, g) for a, b in zip(S, clean.values)])
        dz_clean = np.diff(clean.values, axis=0) / dt
        errs = [norm_h(a - b, g) for a, b in zip(dz, dz_clean)]
        out.delta_ti = lp_time_norm(errs + [0.0], dt, cfg.p)
    return out


class StreamingDerivative:
    """Online version of the temporal smoother's derivative estimate.

    Rows are computed on demand from a causal feed of raw noisy samples; row
    ``k`` needs raw samples up to ``k + 1 + lookahead``.  Arithmetic matches
    :func:`smooth_temporal` operation for operation.
    """

    def __init__(self, raw_feed, cfg: NoiseConfig, dt: float):
        self.raw = raw_feed
        self.cfg = cfg
        self.dt = dt
        self.K = len(raw_feed)
        if cfg.ti_window > self.K:
            raise WindowTooLargeError(f"ti_window={cfg.ti_window} exceeds trajectory length {self.K}")
        self._S: dict[int, np.ndarray] = {}
        self._R: dict[int, np.ndarray] = {}

    def __len__(self):
        return self.K - 1

    def advance(self, k: int) -> None:
        self.raw.advance(k)
        # samples more than one window behind are never needed again
        stale = k - self.cfg.ti_window - 2
        self._S.pop(stale, None)
        self._R.pop(stale, None)

    def _smoothed(self, m: int) -> np.ndarray:
        if m not in self._S:
            self._S[m] = smooth_spatial(self.raw[m], self.cfg)
        return self._S[m]

    def _avg(self, j: int) -> np.ndarray:
        if j not in self._R:
            idx = _window_indices(j, self.K, self.cfg.lookahead)
            acc = self._smoothed(int(idx[0])).copy()
            for m in idx[1:]:
                acc += self._smoothed(int(m))
            acc /= self.cfg.ti_window
            self._R[j] = acc
        return self._R[j]

    def __getitem__(self, k: int) -> np.ndarray:
        return (self._avg(k + 1) - self._avg(k)) / self.dt
