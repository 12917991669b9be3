"""Mollifier measures on the unit ball, stored as quadrature nodes."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

ADMISSIBLE_MAX = 100.0


class InvalidMollifier(ValueError):
    pass


PROFILES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "cosine_bump": lambda r: np.where(r <= 1.0, 0.5 * (1.0 + np.cos(np.pi * np.minimum(r, 1.0))), 0.0),
    "triangle": lambda r: np.clip(1.0 - r, 0.0, None),
    "smooth": lambda r: np.exp(1.0 - 1.0 / (1.0 - np.minimum(r, 1.0 - 1e-9) ** 2)) * (r < 1.0),
    "uniform": lambda r: np.where(r <= 1.0, 1.0, 0.0),
    # all mass at the centre node, whatever the grid
    "spike": lambda r: np.where(r <= 1e-12, 1.0, 0.0),
}


@lru_cache(maxsize=None)
def cell_log_energy(d: int) -> float:
    """E[-log|U - U'|] for U, U' independent uniform on the unit cube [0,1]^d."""
    if d == 1:
        return 1.5
    # density of the difference is prod (1 - |a_i|) on [-1, 1]^d
    if d == 2:
        f = lambda b, a: (1 - a) * (1 - b) * np.log(np.hypot(a, b))
        val = integrate.dblquad(f, 0, 1, 0, 1, epsabs=1e-12)[0]
        return -4.0 * val
    if d == 3:
        f = lambda c, b, a: (1 - a) * (1 - b) * (1 - c) * 0.5 * np.log(a * a + b * b + c * c)
        val = integrate.tplquad(f, 0, 1, 0, 1, 0, 1, epsabs=1e-10)[0]
        return -8.0 * val
    raise NotImplementedError("density mollifiers are supported for d <= 3")


@dataclass(frozen=True, eq=False)
class MollifierSpec:
    """Unit-mass positive measure on the closed unit ball.

    ``self_log`` is the self-energy of one node: two coincident nodes at
    scale eps contribute ``log(1/eps) + self_log`` to a log-kernel double sum.
    For a circle it makes the discrete circle average exactly harmonic; for
    a density it is the log-energy of one grid cell.
    """

    kind: str
    dimension: int
    nodes: np.ndarray
    weights: np.ndarray
    self_log: float
    spacing: float
    name: str = ""

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def key(self) -> tuple:
        return (self.kind, self.dimension, self.name, len(self.weights), round(self.spacing, 14))

    @classmethod
    def from_config(cls, cfg: dict, dimension: int = 2) -> "MollifierSpec":
        kind = cfg.get("kind", "circle")
        if kind == "circle":
            return make_uniform_circle(int(cfg.get("nodes", 64)))
        if kind == "density":
            return make_density(cfg.get("profile", "cosine_bump"), float(cfg.get("grid_step", 0.02)),
                                int(cfg.get("dimension", dimension)))
        raise InvalidMollifier(f"unknown mollifier kind {kind!r}")


def make_uniform_circle(node_count: int) -> MollifierSpec:
    if node_count < 8:
        raise InvalidMollifier("circle needs at least 8 nodes")
    a = 2.0 * np.pi * np.arange(node_count) / node_count
    nodes = np.stack([np.cos(a), np.sin(a)], axis=1)
    w = np.full(node_count, 1.0 / node_count)
    # prod_{j=1}^{n-1} |1 - w^j| = n, so this self term makes the discrete
    # double sum of -log|u - v| vanish as it does on the continuum circle
    return MollifierSpec("circle", 2, nodes, w, float(np.log(node_count)),
                         2.0 * np.sin(np.pi / node_count), f"circle{node_count}")


def make_density(profile, grid_step: float, dimension: int = 2) -> MollifierSpec:
    """Tensor-grid quadrature of a radial density on the unit ball.

    ``profile`` is a name from PROFILES or a callable of the radius.
    Nodes sit at integer multiples of ``grid_step``.
    """
    name = profile if isinstance(profile, str) else getattr(profile, "__name__", "custom")
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise InvalidMollifier(f"unknown profile {profile!r}")
        profile = PROFILES[profile]
    if not 0 < grid_step <= 1:
        raise InvalidMollifier("grid_step must lie in (0, 1]")
    m = int(np.floor(1.0 / grid_step + 1e-9))
    ax = np.arange(-m, m + 1) * grid_step
    grid = np.stack(np.meshgrid(*([ax] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    r = np.linalg.norm(grid, axis=1)
    keep = r <= 1.0 + 1e-12
    grid, r = grid[keep], r[keep]
    vals = np.asarray(profile(r), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise InvalidMollifier("profile must be finite and non-negative")
    if vals.sum() <= 0:
        raise InvalidMollifier("profile is identically zero on the grid")
    nz = vals > 0
    w = vals[nz] / vals[nz].sum()
    self_log = -np.log(grid_step) + cell_log_energy(dimension)
    return MollifierSpec("density", dimension, grid[nz], w, float(self_log), grid_step, f"{name}@{grid_step:g}")


def default_v_grid(dimension: int, radius: float = 5.0, spacing: float = 0.1) -> np.ndarray:
    m = int(np.floor(radius / spacing + 1e-9))
    ax = np.arange(-m, m + 1) * spacing
    g = np.stack(np.meshgrid(*([ax] * dimension), indexing="ij"), axis=-1).reshape(-1, dimension)
    return g[np.linalg.norm(g, axis=1) <= radius + 1e-12]


def check_cond_theta(theta: MollifierSpec, v_grid=None, radius: float = 5.0, spacing: float = 0.1) -> float:
    """sup_v sum_i w_i |u_i - v|^{-1/2}, distances floored at half the node spacing."""
    v = default_v_grid(theta.dimension, radius, spacing) if v_grid is None else np.asarray(v_grid, dtype=float)
    if v.ndim == 1:
        v = v[:, None] if theta.dimension == 1 else v[None, :]
    if v.size == 0:
        raise ValueError("v_grid is empty")
    floor = 0.5 * theta.spacing
    best = 0.0
    for chunk in np.array_split(v, max(1, v.shape[0] * theta.nodes.shape[0] // 2_000_000 + 1)):
        dist = np.linalg.norm(chunk[:, None, :] - theta.nodes[None, :, :], axis=-1)
        s = (theta.weights / np.sqrt(np.maximum(dist, floor))).sum(axis=1)
        best = max(best, float(s.max()))
    return best


def is_admissible(theta: MollifierSpec, threshold: float = ADMISSIBLE_MAX, **kw) -> bool:
    return check_cond_theta(theta, **kw) <= threshold


def scaled_weights(theta: MollifierSpec, eps: float, x) -> tuple[np.ndarray, np.ndarray]:
    """Nodes of theta_{eps,x}: u -> x + eps u, weights unchanged."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    return x + eps * theta.nodes, theta.weights.copy()
