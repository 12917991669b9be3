"""Log-correlated covariance kernels: star-scale kernels, their cut-offs,
the Dirichlet Green function of the unit disk, and Gram-matrix diagnostics.

Points are arrays of shape ``(..., d)``; one-dimensional inputs of shape
``(n,)`` are read as ``n`` points on the line when the kernel lives in d=1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import integrate, sparse
from scipy.sparse.linalg import splu
from scipy.special import gamma as gamma_fn

QUAD_ABS_TOL = 1e-10


class InvalidSeed(ValueError):
    pass


class CoincidentPoints(ValueError):
    pass


# radial profiles on [0, 1]; rescaled to the requested support
BUMPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "triangle": lambda t: np.clip(1.0 - t, 0.0, None),
    "cosine": lambda t: np.where(t <= 1.0, np.cos(0.5 * np.pi * np.minimum(t, 1.0)) ** 2, 0.0),
    "smooth": lambda t: np.exp(1.0 - 1.0 / (1.0 - np.minimum(t, 1.0 - 1e-9) ** 2)) * (t < 1.0),
}


def bump(name: str, support: float) -> Callable[[np.ndarray], np.ndarray]:
    if name not in BUMPS:
        raise KeyError(f"unknown bump {name!r}; choose from {sorted(BUMPS)}")
    base = BUMPS[name]
    return lambda r: base(np.abs(np.asarray(r, dtype=float)) / support)


class _Panels:
    """Piecewise Chebyshev interpolant on fixed panels, vectorized evaluation."""

    def __init__(self, edges, func, degree: int = 24):
        self.edges = np.asarray(edges, dtype=float)
        n = degree + 1
        self.nodes = np.cos(np.pi * (np.arange(n) + 0.5) / n)
        coefs = []
        for a, b in zip(self.edges[:-1], self.edges[1:]):
            x = 0.5 * (a + b) + 0.5 * (b - a) * self.nodes
            coefs.append(C.chebfit(self.nodes, np.asarray(func(x), dtype=float), degree))
        self.coefs = np.array(coefs)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        e = self.edges
        flat = x.reshape(-1)
        idx = np.clip(np.searchsorted(e, flat, side="right") - 1, 0, len(e) - 2)
        out = np.empty_like(flat)
        if flat.size <= 64:
            groups = [(p, idx == p) for p in np.unique(idx)]
        else:
            order = np.argsort(idx, kind="stable")
            cuts = np.searchsorted(idx[order], np.arange(len(e)))
            groups = [(p, order[cuts[p]:cuts[p + 1]]) for p in range(len(e) - 1) if cuts[p + 1] > cuts[p]]
        for p, sel in groups:
            a, b = e[p], e[p + 1]
            t = (2.0 * flat[sel] - a - b) / (b - a)
            out[sel] = C.chebval(t, self.coefs[p])
        return out.reshape(x.shape)


@dataclass(frozen=True)
class SeedFunction:
    """Compactly supported positive-definite seed ``k`` with ``k(0) = 1``."""

    profile: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    value_at_zero: float = 1.0
    dimension: int = 1
    name: str = "custom"
    _remainder: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        return np.where(r < self.support_radius, self.profile(np.minimum(r, self.support_radius)), 0.0)

    def log_remainder(self, a):
        """``int_a^S (k(v) - 1)/v dv`` for ``0 <= a <= S`` (S = support radius)."""
        if self._remainder is None:
            raise RuntimeError("seed was built without its remainder table")
        return self._remainder(np.clip(a, 0.0, self.support_radius))


def _gauss_legendre(n=48):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _remainder_table(k: Callable, S: float, edges: np.ndarray, degree: int) -> _Panels:
    gx, gw = _gauss_legendre()

    def integrand(v):
        v = np.asarray(v, dtype=float)
        return (k(v) - 1.0) / v

    def seg(a, b):
        # int_a^b for arrays a <= b, all inside one panel
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        mid = 0.5 * (a + b)[..., None]
        half = 0.5 * (b - a)[..., None]
        return (half * gw * integrand(mid + half * gx)).sum(-1)

    panel_int = seg(edges[:-1], edges[1:])
    tail = np.concatenate([np.cumsum(panel_int[::-1])[::-1][1:], [0.0]])

    def R(a):
        a = np.asarray(a, dtype=float)
        idx = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, len(edges) - 2)
        return seg(a, edges[idx + 1]) + tail[idx]

    return _Panels(edges, R, degree)


def _radial_autocorrelation(g: Callable, s: float, d: int) -> Callable[[float], float]:
    """r -> int_{R^d} g(|y|) g(|y - r e_1|) dy for a radial profile g supported in [0, s]."""
    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200)

    if d == 1:
        def conv(r):
            lo, hi = r - s, s
            if lo >= hi:
                return 0.0
            pts = [p for p in (0.0, r) if lo < p < hi]
            f = lambda t: float(g(abs(t)) * g(abs(t - r)))
            return integrate.quad(f, lo, hi, points=pts or None, **opts)[0]
        return conv

    area = 2.0 * np.pi ** ((d - 1) / 2) / gamma_fn((d - 1) / 2)
    gx, gw = np.polynomial.legendre.leggauss(96)

    def rule(a, b):
        # Gauss-Legendre nodes/weights on [a, b], broadcast over array endpoints
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        return 0.5 * (a + b) + 0.5 * (b - a) * gx, 0.5 * (b - a) * gw

    def conv(r):
        if r >= 2 * s:
            return 0.0
        # split the radial integral where the shifted profile leaves its support
        cuts = sorted({0.0, s, *[p for p in (abs(r - s), r) if 0 < p < s]})
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            rho, wr = rule(a, b)
            with np.errstate(invalid="ignore", divide="ignore"):
                c = (rho * rho + r * r - s * s) / (2 * rho * r) if r > 0 else np.full_like(rho, 2.0)
            phis = np.arccos(np.clip(c, -1.0, 1.0))
            inner = np.zeros_like(rho)
            for lo, hi in ((np.zeros_like(rho), phis), (phis, np.full_like(rho, np.pi))):
                ph, wp = rule(lo, hi)
                dist = np.sqrt(np.maximum(rho[:, None] ** 2 + r * r - 2 * rho[:, None] * r * np.cos(ph), 0.0))
                inner += (wp * np.sin(ph) ** (d - 2) * g(dist)).sum(-1)
            total += (wr * rho ** (d - 1) * g(rho) * inner).sum()
        return area * total

    return conv


def seed_from_bump(g_profile: Callable, support: float, dimension: int = 1,
                   panels: int = 16, degree: int = 24, name: str = "custom") -> SeedFunction:
    """Build ``k = g * g`` (radial self-convolution in R^d), normalized to k(0) = 1.

    ``g_profile`` is a radial profile on ``[0, support]``; values beyond the
    support are ignored. The result is positive definite by construction and
    supported in ``[0, 2 * support]``.
    """
    if support <= 0 or not np.isfinite(support):
        raise InvalidSeed("support must be a positive finite number")
    g = lambda r: np.where(np.abs(r) <= support, np.asarray(g_profile(np.abs(r)), dtype=float), 0.0)
    probe = g(np.linspace(0.0, support, 257))
    if not np.all(np.isfinite(probe)):
        raise InvalidSeed("profile is not finite on its support")
    conv = _radial_autocorrelation(g, support, dimension)
    k0 = conv(0.0)
    if not np.isfinite(k0) or k0 <= 0.0:
        raise InvalidSeed("profile has zero or non-finite L2 mass")
    S = 2.0 * support
    edges = np.linspace(0.0, S, panels + 1)
    raw = np.vectorize(lambda r: conv(float(r)) / k0)
    kp = _Panels(edges, raw, degree)
    # exact normalization at zero, up to interpolation error
    c0 = float(kp(0.0))
    kp.coefs /= c0
    prof = lambda r: kp(r)
    rem = _remainder_table(prof, S, edges, degree)
    return SeedFunction(prof, S, 1.0, dimension, name, rem)


def seed_from_profile(k_profile: Callable, support_radius: float, dimension: int = 1,
                      override: bool = False, panels: int = 16, degree: int = 24) -> SeedFunction:
    """Wrap a user-supplied seed ``k``. Positive definiteness is not checked,
    so this refuses unless ``override`` is set."""
    if not override:
        raise InvalidSeed("seeds must come from seed_from_bump unless override=True")
    k0 = float(k_profile(0.0))
    if not np.isfinite(k0) or k0 <= 0:
        raise InvalidSeed("k(0) must be positive")
    edges = np.linspace(0.0, support_radius, panels + 1)
    kp = _Panels(edges, lambda r: np.asarray(k_profile(r), dtype=float) / k0, degree)
    prof = lambda r: kp(r)
    rem = _remainder_table(prof, support_radius, edges, degree)
    return SeedFunction(prof, support_radius, 1.0, dimension, "override", rem)


def star_from_name(name: str, support: float, dimension: int = 1) -> SeedFunction:
    return seed_from_bump(bump(name, support), support, dimension, name=name)


# ---- star-scale kernels as functions of the distance -----------------------

def _star_full(k: SeedFunction, r):
    r = np.asarray(r, dtype=float)
    S = k.support_radius
    with np.errstate(divide="ignore"):
        out = np.where(r < S, np.log(S / np.maximum(r, 0.0)) + k.log_remainder(r), 0.0)
    return np.where(r == 0.0, np.inf, out)


def _star_cut(k: SeedFunction, r, eps):
    """int_1^{1/eps} k(u r)/u du, for 0 < eps <= 1 (eps = 1 gives 0)."""
    r = np.asarray(r, dtype=float)
    S = k.support_radius
    inner = r / eps < S
    near = np.log(1.0 / eps) + k.log_remainder(r) - k.log_remainder(r / eps)
    with np.errstate(divide="ignore"):
        far = np.where(r < S, np.log(S / np.maximum(r, 1e-300)) + k.log_remainder(r), 0.0)
    return np.where(inner, near, far)


def star_kernel_eval(k: SeedFunction, r):
    """Star-scale kernel ``int_1^inf k(u r)/u du``; ``inf`` at r = 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be non-negative")
    out = _star_full(k, r)
    return float(out) if out.ndim == 0 else out


def star_kernel_cutoff_eval(k: SeedFunction, r, eps: float):
    """Cut-off kernel ``int_1^{1/eps} k(u r)/u du``, finite everywhere."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be non-negative")
    out = _star_cut(k, r, eps)
    return float(out) if out.ndim == 0 else out


# ---- the unit disk ---------------------------------------------------------

def _as_complex(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("disk points must have shape (..., 2)")
    return p[..., 0] + 1j * p[..., 1]


def green_disk(x, y):
    """Zero-boundary Green function of the unit disk, ``log(|1 - x conj(y)| / |x - y|)``."""
    zx, zy = _as_complex(x), _as_complex(y)
    if np.any(np.abs(zx) > 1) or np.any(np.abs(zy) > 1):
        raise ValueError("points must lie in the closed unit disk")
    d = np.abs(zx - zy)
    if np.any(d == 0):
        raise CoincidentPoints("green_disk is singular at x = y")
    out = np.log(np.abs(1.0 - zx * np.conj(zy)) / d)
    return float(out) if out.ndim == 0 else out


def discrete_green_disk(h: float, sources, probes) -> np.ndarray:
    """Finite-difference Green function of the unit disk.

    Solves the 5-point Laplacian (Shortley-Weller stencil at the curved
    boundary) with zero Dirichlet data and a point source of mass ``2 pi``,
    matching the ``-log|x - y|`` normalization. ``sources`` and ``probes`` are
    snapped to grid nodes; returns ``G_h[source_i, probe_i]``.
    """
    n = int(round(1.0 / h))
    ax = np.arange(-n, n + 1)
    I, J = np.meshgrid(ax, ax, indexing="ij")
    X, Y = I * h, J * h
    inside = X ** 2 + Y ** 2 < 1.0 - 1e-12
    index = -np.ones(I.shape, dtype=np.int64)
    index[inside] = np.arange(inside.sum())
    rows, cols, vals = [], [], []
    pi_, pj_ = np.nonzero(inside)

    # distance fraction to the circle along each axis direction
    def frac(x, y, dx, dy):
        # smallest t in (0, 1] with |(x, y) + t h (dx, dy)| = 1
        b = x * dx + y * dy
        c = x * x + y * y - 1.0
        t = (-b + np.sqrt(b * b - c)) / h
        return np.clip(t, 1e-3, 1.0)

    xs, ys = X[pi_, pj_], Y[pi_, pj_]
    me = index[pi_, pj_]
    diag = np.zeros(me.size)
    for axis in (0, 1):
        tp = np.ones(me.size)
        tm = np.ones(me.size)
        nb = {}
        for sgn in (1, -1):
            qi = pi_ + (sgn if axis == 0 else 0)
            qj = pj_ + (sgn if axis == 1 else 0)
            ok = inside[qi, qj]
            dx, dy = (sgn, 0) if axis == 0 else (0, sgn)
            t = np.where(ok, 1.0, frac(xs, ys, dx, dy))
            if sgn == 1:
                tp = t
            else:
                tm = t
            nb[sgn] = (ok, index[qi, qj])
        denom = tp * tm * h * h
        diag += 2.0 / denom
        for sgn, t_own, t_other in ((1, tp, tm), (-1, tm, tp)):
            ok, q = nb[sgn]
            coef = -2.0 / (t_own * (t_own + t_other) * h * h)
            rows.append(me[ok])
            cols.append(q[ok])
            vals.append(coef[ok])
    rows.append(me)
    cols.append(me)
    vals.append(diag)
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(me.size, me.size))
    lu = splu(A)

    def snap(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        i = np.rint(p[:, 0] / h).astype(int) + n
        j = np.rint(p[:, 1] / h).astype(int) + n
        idx = index[i, j]
        if np.any(idx < 0):
            raise ValueError("probe outside the discrete disk")
        return idx

    src, prb = snap(sources), snap(probes)
    out = np.empty(src.size)
    cache: dict[int, np.ndarray] = {}
    for m, (s, p) in enumerate(zip(src, prb)):
        if s not in cache:
            rhs = np.zeros(me.size)
            rhs[s] = 2.0 * np.pi / (h * h)
            cache[s] = lu.solve(rhs)
        out[m] = cache[s][p]
    return out


# ---- kernel specifications -------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """A log-correlated kernel.

    kind is ``"gff_disk"`` (Dirichlet Green function of the unit disk),
    ``"star"`` (star-scale kernel built from ``seed``) or ``"star_cutoff"``
    (the star kernel truncated at scale ``eps``).
    """

    kind: str
    seed: SeedFunction | None = None
    eps: float | None = None
    dimension: int = 2

    def __post_init__(self):
        if self.kind not in ("gff_disk", "star", "star_cutoff"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind != "gff_disk" and self.seed is None:
            raise ValueError("star kernels need a seed")
        if self.kind == "star_cutoff" and not (self.eps and 0 < self.eps <= 1):
            raise ValueError("star_cutoff needs eps in (0, 1]")
        if self.kind == "gff_disk" and self.dimension != 2:
            raise ValueError("gff_disk lives in dimension 2")

    @classmethod
    def gff_disk(cls) -> "KernelSpec":
        return cls("gff_disk", dimension=2)

    @classmethod
    def star(cls, seed: SeedFunction) -> "KernelSpec":
        return cls("star", seed=seed, dimension=seed.dimension)

    def cutoff(self, eps: float) -> "KernelSpec":
        if self.kind == "gff_disk":
            raise ValueError("the disk kernel has no scale cut-off")
        if self.kind == "star_cutoff":
            eps = max(eps, self.eps)
        return KernelSpec("star_cutoff", self.seed, eps, self.dimension)

    @property
    def is_star(self) -> bool:
        return self.kind != "gff_disk"

    @property
    def floor(self) -> float:
        """Finest scale resolved by the kernel (0 for the untruncated kernels)."""
        return self.eps if self.kind == "star_cutoff" else 0.0

    def points(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.dimension == 1 and (p.ndim == 0 or p.shape[-1] != 1):
            p = p[..., None]
        return p

    def distance(self, x, y):
        return np.linalg.norm(self.points(x) - self.points(y), axis=-1)

    def radial(self, r, eps: float | None = None):
        """Star kernel at distance r, cut off at max(eps, own floor)."""
        e = max(eps or 0.0, self.floor)
        return _star_full(self.seed, r) if e == 0.0 else _star_cut(self.seed, r, e)

    def __call__(self, x, y):
        if self.kind == "gff_disk":
            zx, zy = _as_complex(x), _as_complex(y)
            with np.errstate(divide="ignore"):
                return np.log(np.abs(1.0 - zx * np.conj(zy)) / np.abs(zx - zy))
        return self.radial(self.distance(x, y))

    def regular_part(self, x, y):
        """``K(x, y) + log|x - y|``, extended continuously to x = y."""
        if self.kind == "gff_disk":
            zx, zy = _as_complex(x), _as_complex(y)
            return np.log(np.abs(1.0 - zx * np.conj(zy)))
        r = self.distance(x, y)
        S = self.seed.support_radius
        if self.kind == "star":
            with np.errstate(divide="ignore"):
                return np.where(r < S, np.log(S) + self.seed.log_remainder(r), np.log(np.maximum(r, 1e-300)))
        with np.errstate(divide="ignore"):
            return self.radial(r) + np.log(r)

    def self_variance(self, x, eps: float):
        """Variance of the field smoothed at scale eps at x: the cut-off kernel
        on the diagonal for star kernels, the circle-average variance
        ``log(1/eps) + log(1 - |x|^2)`` for the disk."""
        if self.kind == "gff_disk":
            z = _as_complex(x)
            return np.log(1.0 / eps) + np.log(1.0 - np.abs(z) ** 2)
        x = self.points(x)
        return np.full(x.shape[:-1], float(self.radial(0.0, eps)))

    @classmethod
    def from_config(cls, cfg: dict) -> "KernelSpec":
        kind = cfg.get("kind", "gff_disk")
        if kind == "gff_disk":
            return cls.gff_disk()
        if kind in ("star", "star_cutoff"):
            seed = star_from_name(cfg.get("bump", "triangle"), float(cfg.get("support", 0.5)),
                                  int(cfg.get("dimension", 1)))
            K = cls.star(seed)
            return K.cutoff(float(cfg["eps"])) if kind == "star_cutoff" else K
        raise ValueError(f"unknown kernel kind {kind!r}")


def check_positive_definite(K, points, ridge: float = 0.0, self_eps: float = 1e-2) -> float:
    """Minimum eigenvalue of the Gram matrix of ``K`` on ``points``.

    The diagonal uses :meth:`KernelSpec.self_variance` at ``self_eps`` (the raw
    kernel diverges there). ``K`` may also be any callable ``K(x, y)`` that
    broadcasts over point arrays and is finite on its diagonal.
    """
    if isinstance(K, KernelSpec):
        P = K.points(points)
    else:
        P = np.asarray(points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
    n = P.shape[0]
    D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    if np.any(D[~np.eye(n, dtype=bool)] == 0):
        raise CoincidentPoints("duplicate points in Gram matrix")
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.asarray(K(P[:, None, :], P[None, :, :]), dtype=float)
    G = np.broadcast_to(G, (n, n)).copy()
    if isinstance(K, KernelSpec):
        G[np.diag_indices(n)] = K.self_variance(P, self_eps)
    G = 0.5 * (G + G.T) + ridge * np.eye(n)
    return float(np.linalg.eigvalsh(G)[0])


def kernel_log_remainder(K: KernelSpec, x, y) -> float:
    """Regular part ``K(x, y) + log|x - y|`` at two distinct points."""
    if np.any(K.distance(x, y) == 0):
        raise CoincidentPoints("remainder is evaluated off the diagonal")
    out = np.asarray(K(x, y) + np.log(K.distance(x, y)))
    return float(out) if out.ndim == 0 else out
