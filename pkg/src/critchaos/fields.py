"""Exact joint Gaussian sampling of finite families of field functionals.

A functional is either a convolution of the field against a mollifier at
scale eps around x, a circle average (the circle mollifier), or a star
cut-off value (the field whose covariance is K_delta). Covariances are
double sums of kernel values over quadrature nodes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .kernels import KernelSpec, SeedFunction
from .mollifiers import MollifierSpec, make_uniform_circle
from .rng import stream

CIRCLE_NODES = 128
MAX_FUNCTIONALS = 4096
RIDGE_REL = 1e-10


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, minor: int, msg: str = ""):
        self.minor = minor
        super().__init__(msg or f"covariance is not positive definite at leading minor {minor}")


class DegenerateCoefficients(ValueError):
    pass


_CIRCLE: dict[int, MollifierSpec] = {}


def circle(n: int = CIRCLE_NODES) -> MollifierSpec:
    if n not in _CIRCLE:
        _CIRCLE[n] = make_uniform_circle(n)
    return _CIRCLE[n]


@dataclass(frozen=True, eq=False)
class FunctionalDescriptor:
    kind: str  # convolution | circle_average | star_cutoff
    x: tuple
    scale: float
    mollifier: MollifierSpec | None = None
    label: str = ""

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.kind not in ("convolution", "circle_average", "star_cutoff"):
            raise ValueError(f"unknown functional kind {self.kind!r}")

    @property
    def point(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    def atoms(self):
        """(points, weights, log effective size) for node functionals."""
        th = self.mollifier
        pts = self.point + self.scale * th.nodes
        return pts, th.weights, np.log(self.scale) - th.self_log


def _pt(x) -> tuple:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


def convolution(theta: MollifierSpec, eps: float, x, label: str | None = None) -> FunctionalDescriptor:
    x = _pt(x)
    if len(x) != theta.dimension:
        raise ValueError("point and mollifier dimensions differ")
    return FunctionalDescriptor("convolution", x, float(eps), theta, label or f"conv[{eps:.6g}]@{x}")


def circle_average(delta: float, x, label: str | None = None, nodes: int = CIRCLE_NODES) -> FunctionalDescriptor:
    x = _pt(x)
    if len(x) != 2:
        raise ValueError("circle averages live in the plane")
    return FunctionalDescriptor("circle_average", x, float(delta), circle(nodes), label or f"circ[{delta:.6g}]@{x}")


def star_cutoff(delta: float, x, label: str | None = None) -> FunctionalDescriptor:
    return FunctionalDescriptor("star_cutoff", _pt(x), float(delta), None, label or f"star[{delta:.6g}]@{_pt(x)}")


def _validate(K: KernelSpec, d: FunctionalDescriptor):
    if len(d.x) != K.dimension:
        raise ValueError(f"{d.label}: point dimension {len(d.x)} != kernel dimension {K.dimension}")
    if d.kind == "star_cutoff":
        if not K.is_star:
            raise ValueError("star cut-off functionals need a star kernel")
        if d.scale > 1:
            raise ValueError("star cut-off scale must be at most 1")
    if K.kind == "gff_disk" and np.linalg.norm(d.point) + d.scale >= 1.0:
        raise ValueError(f"{d.label}: ball B(x, scale) leaves the unit disk")


def _node_block(K: KernelSpec, A: FunctionalDescriptor, B: FunctionalDescriptor) -> float:
    pa, wa, la = A.atoms()
    pb, wb, lb = B.atoms()
    total = 0.0
    step = max(1, 4_000_000 // max(len(wb), 1))
    for i in range(0, len(wa), step):
        P = pa[i:i + step]
        with np.errstate(divide="ignore", invalid="ignore"):
            M = np.asarray(K(P[:, None, :], pb[None, :, :]), dtype=float)
        if K.floor == 0.0:
            # node pairs closer than the effective cell size get the cell self term
            D = np.linalg.norm(P[:, None, :] - pb[None, :, :], axis=-1)
            hit = D < np.exp(max(la, lb))
            if hit.any():
                ii, jj = np.nonzero(hit)
                cap = -max(la, lb) + K.regular_part(P[ii], P[ii])
                M[ii, jj] = np.minimum(np.where(D[ii, jj] <= 1e-13, np.inf, M[ii, jj]), cap)
        total += wa[i:i + step] @ M @ wb
    return float(total)


def functional_cov(K: KernelSpec, A: FunctionalDescriptor, B: FunctionalDescriptor) -> float:
    if A.kind == "star_cutoff" or B.kind == "star_cutoff":
        e = max(A.scale if A.kind == "star_cutoff" else 0.0, B.scale if B.kind == "star_cutoff" else 0.0)
        if A.kind == "star_cutoff" and B.kind == "star_cutoff":
            r = np.linalg.norm(A.point - B.point)
            return float(K.radial(r, e))
        S, N = (A, B) if A.kind == "star_cutoff" else (B, A)
        pts, w, _ = N.atoms()
        r = np.linalg.norm(pts - S.point, axis=-1)
        return float(w @ K.radial(r, e))
    return _node_block(K, A, B)


def covariance_matrix(K: KernelSpec, descriptors: Sequence[FunctionalDescriptor]) -> np.ndarray:
    n = len(descriptors)
    for d in descriptors:
        _validate(K, d)
    C = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            C[i, j] = C[j, i] = functional_cov(K, descriptors[i], descriptors[j])
    return C


def cholesky(C: np.ndarray, ridge_rel: float = RIDGE_REL):
    n = C.shape[0]
    ridge = ridge_rel * float(np.trace(C)) / max(n, 1)
    L, info = lapack.dpotrf(C + ridge * np.eye(n), lower=1, clean=1)
    if info > 0:
        raise FactorizationError(int(info))
    if info < 0:
        raise ValueError("invalid argument to dpotrf")
    return L, ridge


@dataclass(frozen=True, eq=False)
class FunctionalEnsemble:
    descriptors: tuple
    covariance: np.ndarray
    factor: np.ndarray
    kernel: KernelSpec
    ridge: float

    @property
    def labels(self) -> list[str]:
        return [d.label for d in self.descriptors]

    def index(self, label: str) -> int:
        return self.labels.index(label)


def build_ensemble(K: KernelSpec, descriptors: Sequence[FunctionalDescriptor],
                   ridge_rel: float = RIDGE_REL) -> FunctionalEnsemble:
    descriptors = tuple(descriptors)
    if len(descriptors) > MAX_FUNCTIONALS:
        raise ValueError(f"dense path is capped at {MAX_FUNCTIONALS} functionals")
    labels = [d.label for d in descriptors]
    if len(set(labels)) != len(labels):
        raise ValueError("functional labels must be distinct")
    C = covariance_matrix(K, descriptors)
    L, ridge = cholesky(C, ridge_rel)
    return FunctionalEnsemble(descriptors, C, L, K, ridge)


@dataclass(frozen=True, eq=False)
class FieldSample:
    ensemble: FunctionalEnsemble
    values: np.ndarray
    seed: tuple

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ensemble.labels, map(float, self.values)))


def sample(ensemble: FunctionalEnsemble, seed: int, replica: int = 0) -> FieldSample:
    z = stream(seed, replica).standard_normal(len(ensemble.descriptors))
    return FieldSample(ensemble, ensemble.factor @ z, (seed, replica))


def sample_many(ensemble: FunctionalEnsemble, seed: int, n: int, first: int = 0) -> np.ndarray:
    """Rows are replicas first..first+n-1; row r equals sample(ensemble, seed, r).values."""
    m = len(ensemble.descriptors)
    Z = np.empty((n, m))
    for r in range(n):
        Z[r] = stream(seed, first + r).standard_normal(m)
    return Z @ ensemble.factor.T


def write_samples_csv(path, samples: Sequence[FieldSample]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "value", "seed"])
        for s in samples:
            for lab, v in zip(s.ensemble.labels, s.values):
                w.writerow([lab, repr(float(v)), f"{s.seed[0]}:{s.seed[1]}"])


# ---- layered star field -----------------------------------------------------

def sample_star_layers(k: SeedFunction, x_grid, scale_grid, seed: int, n_samples: int = 1,
                       first: int = 0, ridge_rel: float = RIDGE_REL) -> np.ndarray:
    """Running sums h~_{eps_j}(x) of independent scale layers.

    Layer j has covariance K_{eps_j} - K_{eps_{j-1}} on x_grid (with
    K_{eps_{-1}} = K_1 = 0), drawn from stream(seed, replica, j + 1).
    Returns an array of shape (n_samples, len(scale_grid), len(x_grid)).
    """
    eps = np.asarray(scale_grid, dtype=float)
    if eps.ndim != 1 or len(eps) == 0 or np.any(np.diff(eps) >= 0) or eps[0] > 1 or eps[-1] <= 0:
        raise ValueError("scale_grid must be strictly decreasing in (0, 1]")
    K = KernelSpec.star(k)
    X = K.points(x_grid)
    if X.ndim == 1:
        X = X[None, :]
    D = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    prev = np.zeros_like(D)
    factors = []
    for e in eps:
        cur = np.asarray(K.radial(D, e)) if e < 1 else np.zeros_like(D)
        inc = cur - prev
        prev = cur
        if not np.any(inc):
            factors.append(np.zeros_like(inc))
            continue
        L, _ = cholesky(0.5 * (inc + inc.T), ridge_rel)
        factors.append(L)
    n = X.shape[0]
    out = np.empty((n_samples, len(eps), n))
    for r in range(n_samples):
        acc = np.zeros(n)
        for j, L in enumerate(factors):
            acc = acc + L @ stream(seed, first + r, j + 1).standard_normal(n)
            out[r, j] = acc
    return out


# ---- comparison decomposition ----------------------------------------------

@dataclass(frozen=True)
class ComparisonCoefficients:
    eps: float
    lambda_eps: float
    var_conv: float
    var_tilde: float
    var_Y: float
    gamma: float
    deltas: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    tilde_var: np.ndarray = field(repr=False)
    cov_conv_tilde: np.ndarray = field(repr=False)

    def rho_at(self, delta: float) -> float:
        i = np.flatnonzero(np.isclose(self.deltas, delta, rtol=1e-12, atol=0))
        if i.size == 0:
            raise KeyError(delta)
        return float(self.rho[i[0]])


def tilde_functional(K: KernelSpec, delta: float, x, label=None) -> FunctionalDescriptor:
    return star_cutoff(delta, x, label) if K.is_star else circle_average(delta, x, label)


def comparison_coefficients(K: KernelSpec, theta: MollifierSpec, eps: float, delta_schedule, x,
                            gamma: float | None = None) -> ComparisonCoefficients:
    """lambda_eps, var(Y_eps) and rho_delta for h_eps = lambda h~_eps + Y_eps.

    rho_delta = -gamma cov(Y_eps, h~_delta) with gamma = sqrt(2d) by default
    (2 for the planar field).
    """
    if gamma is None:
        gamma = float(np.sqrt(2 * K.dimension))
    deltas = np.asarray(delta_schedule, dtype=float)
    if np.any(deltas < eps * (1 - 1e-12)):
        raise ValueError("delta schedule must lie in [eps, eps0]")
    descs = [convolution(theta, eps, x, "h"), tilde_functional(K, eps, x, "t")]
    descs += [tilde_functional(K, d, x, f"t{j}") for j, d in enumerate(deltas)]
    C = covariance_matrix(K, descs)
    var_conv, var_tilde = C[0, 0], C[1, 1]
    if var_tilde <= 0:
        raise DegenerateCoefficients("circle/cut-off variance is zero")
    lam = C[0, 1] / var_tilde
    covY = C[0, 2:] - lam * C[1, 2:]
    rho = -gamma * covY
    return ComparisonCoefficients(float(eps), float(lam), float(var_conv), float(var_tilde),
                                  float(var_conv - lam * lam * var_tilde), gamma, deltas, rho,
                                  np.diag(C)[2:].copy(), C[0, 2:].copy())


# ---- min particle and roughness ---------------------------------------------

def min_particle_statistic(values, eps, d: int) -> float:
    """min over scales j and points of -h_{eps_j}(x) + sqrt(2d) log(1/eps_j).

    ``values`` has shape (n_scales, n_points)."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    e = np.atleast_1d(np.asarray(eps, dtype=float))
    if v.shape[0] != e.size:
        raise ValueError("one row of values per scale")
    return float(np.min(-v + np.sqrt(2 * d) * np.log(1.0 / e)[:, None]))


ROUGHNESS_GATE = 10.0


def increment_roughness(K: KernelSpec, theta: MollifierSpec, eps: float, pairs) -> float:
    """max over pairs of E[(h_eps(x) - h_eps(y))^2] sqrt(eps / |x - y|)."""
    best = 0.0
    for x, y in pairs:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        r = float(np.linalg.norm(x - y))
        if r >= eps:
            raise ValueError("pairs must satisfy |x - y| < eps")
        if r == 0.0:
            continue
        A, B = convolution(theta, eps, x, "a"), convolution(theta, eps, y, "b")
        C = covariance_matrix(K, [A, B])
        inc = C[0, 0] + C[1, 1] - 2 * C[0, 1]
        best = max(best, inc * np.sqrt(eps / r))
    return float(best)
