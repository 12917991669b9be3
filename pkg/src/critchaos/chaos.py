"""Approximate chaos measures on a cell partition of the observation window.

All measure constructors broadcast over leading replica axes: ``values``
may have shape (..., n_cells).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

F_THRESHOLD = 1.0


@dataclass(frozen=True, eq=False)
class CellPartition:
    centers: np.ndarray
    volumes: np.ndarray
    window: dict

    def __post_init__(self):
        if np.any(self.volumes <= 0):
            raise ValueError("cell volumes must be positive")
        if self.centers.shape[0] != self.volumes.shape[0]:
            raise ValueError("one volume per cell")

    def __len__(self):
        return self.volumes.shape[0]

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @classmethod
    def interval(cls, a: float, b: float, n: int) -> "CellPartition":
        w = (b - a) / n
        c = a + w * (np.arange(n) + 0.5)
        return cls(c[:, None], np.full(n, w), {"kind": "interval", "a": a, "b": b, "volume": b - a})

    @classmethod
    def box(cls, lo, hi, shape) -> "CellPartition":
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        axes = [lo[i] + (hi[i] - lo[i]) / n * (np.arange(n) + 0.5) for i, n in enumerate(shape)]
        c = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(shape))
        vol = np.prod((hi - lo) / np.asarray(shape))
        return cls(c, np.full(c.shape[0], vol), {"kind": "box", "lo": lo.tolist(), "hi": hi.tolist(),
                                                  "volume": float(np.prod(hi - lo))})

    @classmethod
    def disk(cls, n_r: int, n_theta: int, radius: float = 1.0) -> "CellPartition":
        """Polar cells of the disk of the given radius, with exact annular-sector areas."""
        r = np.linspace(0.0, radius, n_r + 1)
        t = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        rm = 0.5 * (r[1:] + r[:-1])
        area = np.pi * (r[1:] ** 2 - r[:-1] ** 2) / n_theta
        R, T = np.meshgrid(rm, t, indexing="ij")
        c = np.stack([R * np.cos(T), R * np.sin(T)], -1).reshape(-1, 2)
        return cls(c, np.repeat(area, n_theta), {"kind": "disk", "radius": radius, "volume": np.pi * radius ** 2})


@dataclass(frozen=True, eq=False)
class ChaosField:
    partition: CellPartition
    masses: np.ndarray
    kind: str
    eps: float | None = None
    beta: float | None = None
    gamma: float | None = None

    def total(self):
        return self.masses.sum(axis=-1)


@dataclass(frozen=True)
class TiltedCoordinates:
    f: float
    g_exp: float
    f_tilde: float
    g_tilde: float
    barrier_ok: bool


def _check(values, variances, partition):
    v = np.asarray(values, dtype=float)
    s2 = np.broadcast_to(np.asarray(variances, dtype=float), v.shape)
    if v.shape[-1] != len(partition):
        raise ValueError(f"{v.shape[-1]} values for {len(partition)} cells")
    return v, s2


def subcritical_measure(values, variances, gamma: float, partition: CellPartition, eps=None) -> ChaosField:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    v, s2 = _check(values, variances, partition)
    m = np.exp(gamma * v - 0.5 * gamma * gamma * s2) * partition.volumes
    return ChaosField(partition, m, "subcritical", eps, gamma=gamma)


def critical_and_derivative(values, variances, d: int, partition: CellPartition, eps=None,
                            normalization: str = "variance"):
    """M_eps and the signed derivative measure D_eps at gamma = sqrt(2d).

    normalization="log" replaces sqrt(2d) var h_eps by sqrt(2d) log(1/eps) in the D weight.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    g = np.sqrt(2.0 * d)
    v, s2 = _check(values, variances, partition)
    dens = np.exp(g * v - d * s2)
    if normalization == "variance":
        w = -v + g * s2
    elif normalization == "log":
        if eps is None:
            raise ValueError("log normalization needs eps")
        w = -v + g * np.log(1.0 / eps)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    M = ChaosField(partition, dens * partition.volumes, "critical_mass", eps, gamma=g)
    D = ChaosField(partition, w * dens * partition.volumes, "derivative", eps, gamma=g)
    return M, D


def seneta_heyde(M: ChaosField) -> ChaosField:
    if M.kind != "critical_mass":
        raise ValueError("Seneta-Heyde scaling applies to the critical mass")
    if M.eps is None or not 0 < M.eps < 1:
        raise ValueError("needs 0 < eps < 1")
    return ChaosField(M.partition, M.masses * np.sqrt(np.log(1.0 / M.eps)), "seneta_heyde", M.eps, gamma=M.gamma)


def _coef_arrays(coeffs, n_cells):
    if isinstance(coeffs, Sequence) and not hasattr(coeffs, "lambda_eps"):
        if len(coeffs) != n_cells:
            raise ValueError("one coefficient set per cell")
        lam = np.array([c.lambda_eps for c in coeffs])
        var_conv = np.array([c.var_conv for c in coeffs])
        tv = np.stack([c.tilde_var for c in coeffs], -1)
        rho = np.stack([c.rho for c in coeffs], -1)
        return lam, var_conv, tv, rho, coeffs[0].deltas
    return coeffs.lambda_eps, coeffs.var_conv, coeffs.tilde_var[:, None], coeffs.rho[:, None], coeffs.deltas


def barrier_event(tilde, coeffs, beta: float, gamma: float, n_cells: int):
    """L_eps(x): -h~_delta + gamma lambda var h~_delta + beta - rho_delta > 0 on the whole schedule.

    ``tilde`` has shape (..., n_deltas, n_cells) ordered like coeffs.deltas.
    """
    lam, _, tv, rho, _ = _coef_arrays(coeffs, n_cells)
    t = np.asarray(tilde, dtype=float)
    if t.shape[-2] != tv.shape[0]:
        raise ValueError("tilde schedule and coefficient schedule differ")
    return np.all(-t + gamma * lam * tv + beta - rho > 0, axis=-2)


def cutoff_measures(conv, tilde, coeffs, beta: float, d: int, partition: CellPartition, eps: float,
                    eps0: float | None = None, f_threshold: float = F_THRESHOLD):
    """(M_eps^beta, D_eps^beta) with the barrier event and the {f > threshold} indicator."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    n = len(partition)
    lam, var_conv, _, _, deltas = _coef_arrays(coeffs, n)
    if not np.isclose(deltas.min(), eps, rtol=1e-9):
        raise ValueError("barrier schedule must reach down to eps")
    if eps0 is not None and not np.isclose(deltas.max(), eps0, rtol=1e-9):
        raise ValueError("barrier schedule must reach up to eps0")
    g = np.sqrt(2.0 * d)
    v, s2 = _check(conv, var_conv, partition)
    ok = barrier_event(tilde, coeffs, beta, g, n)
    f = -v + g * s2 + beta
    keep = ok & (f > f_threshold)
    dens = np.where(keep, np.exp(g * v - d * s2), 0.0) * partition.volumes
    M = ChaosField(partition, dens, "cutoff_mass", eps, beta, g)
    D = ChaosField(partition, f * dens, "cutoff_derivative", eps, beta, g)
    return M, D


def tilted_coordinates(h, tilde_path, coeffs, beta: float, d: int) -> TiltedCoordinates:
    """Single-point f, g, f~, g~ (at gamma = sqrt(2d), lambda-scaled for the tilde pair) and L_eps."""
    g = np.sqrt(2.0 * d)
    lam = coeffs.lambda_eps
    t = np.asarray(tilde_path, dtype=float)
    i = int(np.argmin(coeffs.deltas))
    f = -h + g * coeffs.var_conv + beta
    ge = g * h - 0.5 * g * g * coeffs.var_conv
    gl = g * lam
    ft = -t[i] + gl * coeffs.tilde_var[i] + beta
    gt = gl * t[i] - 0.5 * gl * gl * coeffs.tilde_var[i]
    ok = bool(np.all(-t + gl * coeffs.tilde_var + beta - coeffs.rho > 0))
    return TiltedCoordinates(float(f), float(ge), float(ft), float(gt), ok)


def ratio_statistic(M: ChaosField, D: ChaosField):
    """sqrt(log(1/eps)) M(O) / D(O); nan where D(O) <= 0."""
    m, dd = M.total(), D.total()
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(np.log(1.0 / M.eps)) * m / dd
    r = np.where(dd > 0, r, np.nan)
    return float(r) if np.ndim(r) == 0 else r


def derivative_consistency(values, variances, d: int, gamma_step: float, partition: CellPartition) -> float:
    """Max cell-wise error of -(mu^{g+s} - mu^{g-s}) / 2s against D at g = sqrt(2d).

    Errors are scaled by max(|D_i|, M_i sigma_i) so cells where the D weight
    crosses zero are compared on the natural scale of the cell mass.
    """
    if not 0 < gamma_step < 0.1:
        raise ValueError("gamma_step must lie in (0, 0.1)")
    g = np.sqrt(2.0 * d)
    M, D = critical_and_derivative(values, variances, d, partition)
    up = subcritical_measure(values, variances, g + gamma_step, partition).masses
    dn = subcritical_measure(values, variances, g - gamma_step, partition).masses
    fd = -(up - dn) / (2 * gamma_step)
    _, s2 = _check(values, variances, partition)
    scale = np.maximum(np.abs(D.masses), M.masses * np.sqrt(s2))
    err = np.abs(fd - D.masses)
    rel = np.divide(err, scale, out=np.zeros_like(err), where=scale > 0)
    return float(rel.max())


def tail_mass(totals, T: float) -> float:
    """E[X; X > T] estimated from replica totals."""
    x = np.asarray(totals, dtype=float)
    return float(np.mean(np.where(x > T, x, 0.0)))
