"""Brownian and Bessel(3) paths, the barrier martingale, the tilted (rooted)
radial law and estimators for Bessel(3) moments.

The martingale is

    (-B_t + gamma t + beta) 1{-B_u + gamma u + beta > 0, u <= t} exp(gamma B_t - gamma^2 t / 2)

and under the measure it defines, -B_t + gamma t + beta is a Bessel(3)
process whose starting point is size-biased.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .rng import stream

# layer keys inside one replica stream family
_L_PATH, _L_START, _L_AUX = 11, 12, 13


@dataclass(frozen=True)
class StartLaw:
    """Law of B_0: fixed value, Gaussian (optionally truncated to [lo, hi]) or uniform."""

    kind: str = "fixed"
    value: float = 0.0
    mean: float = 0.0
    sd: float = 1.0
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "gaussian", "uniform"):
            raise ValueError(f"unknown start law {self.kind!r}")
        if self.kind == "uniform" and (self.lo is None or self.hi is None or self.hi <= self.lo):
            raise ValueError("uniform start needs lo < hi")
        if self.kind == "gaussian" and self.sd <= 0:
            raise ValueError("gaussian start needs sd > 0")

    @property
    def bounded(self) -> bool:
        return self.kind != "gaussian" or (self.lo is not None and self.hi is not None)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, float(self.value))
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, n)
        lo = -np.inf if self.lo is None else self.lo
        hi = np.inf if self.hi is None else self.hi
        out = np.empty(0)
        while out.size < n:
            z = rng.normal(self.mean, self.sd, 2 * (n - out.size) + 16)
            out = np.concatenate([out, z[(z >= lo) & (z <= hi)]])
        return out[:n]


@dataclass(frozen=True)
class TiltSpec:
    gamma: float
    beta: float
    start_law: StartLaw = field(default_factory=StartLaw)

    def __post_init__(self):
        if self.gamma <= 0 or self.beta <= 0:
            raise ValueError("gamma and beta must be positive")


@dataclass(frozen=True, eq=False)
class Path:
    times: np.ndarray
    values: np.ndarray  # (n_paths, n_times)
    kind: str

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.kind == "bessel3" and np.any(self.values <= 0):
            raise ValueError("Bessel(3) values must be positive")

    def at(self, t: float) -> np.ndarray:
        i = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=1e-14))
        if i.size == 0:
            raise KeyError(f"t={t} is not on the time grid")
        return self.values[:, i[0]]


def _grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 1 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must increase strictly from 0")
    return t


def _bm_increments(rng, t, n_paths, dim=None):
    dt = np.diff(t)
    shape = (n_paths, dt.size) if dim is None else (n_paths, dim, dt.size)
    return rng.standard_normal(shape) * np.sqrt(dt)


def sample_brownian(t_grid, b0, seed: int, n_paths: int = 1, replica: int = 0) -> Path:
    """Standard Brownian paths on t_grid started at b0 (scalar or one value per path)."""
    t = _grid(t_grid)
    rng = stream(seed, replica, _L_PATH)
    inc = _bm_increments(rng, t, n_paths)
    b0 = np.broadcast_to(np.asarray(b0, dtype=float), (n_paths,))
    vals = np.concatenate([b0[:, None], b0[:, None] + np.cumsum(inc, axis=1)], axis=1)
    return Path(t, vals, "brownian")


def sample_bessel3(t_grid, x0, seed: int, n_paths: int = 1, replica: int = 0) -> Path:
    """Exact Bessel(3): the modulus of a 3d Brownian motion started at (x0, 0, 0)."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,))
    if np.any(x0 <= 0):
        raise ValueError("x0 must be positive")
    t = _grid(t_grid)
    rng = stream(seed, replica, _L_PATH)
    inc = _bm_increments(rng, t, n_paths, dim=3)
    pos = np.cumsum(inc, axis=2)
    pos[:, 0, :] += x0[:, None]
    vals = np.concatenate([x0[:, None], np.linalg.norm(pos, axis=1)], axis=1)
    return Path(t, vals, "bessel3")


def martingale_value(path: Path, tilt: TiltSpec, t: float) -> np.ndarray:
    """The barrier martingale at time t, barrier checked on the path's grid points <= t."""
    if path.kind != "brownian":
        raise ValueError("needs a Brownian path")
    i = np.flatnonzero(np.isclose(path.times, t, rtol=1e-12, atol=1e-14))
    if i.size == 0:
        raise KeyError(f"t={t} is not on the time grid")
    i = i[0]
    g, b = tilt.gamma, tilt.beta
    u = path.times[: i + 1]
    B = path.values[:, : i + 1]
    x = -B + g * u + b
    alive = np.all(x > 0, axis=1)
    return np.where(alive, x[:, -1] * np.exp(g * B[:, -1] - 0.5 * g * g * t), 0.0)


def _bridge_survival(a: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """P(a Brownian bridge stays above 0 between grid points) from the gaps a >= 0."""
    lo, hi = a[:, :-1], a[:, 1:]
    p = 1.0 - np.exp(-2.0 * np.maximum(lo, 0) * np.maximum(hi, 0) / dt)
    return np.prod(np.where((lo > 0) & (hi > 0), p, 0.0), axis=1)


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    n: int

    def as_dict(self):
        return {"estimate": self.mean, "se": self.se, "n": self.n}


def _est(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    return Estimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)), int(x.size))


def martingale_mean(tilt: TiltSpec, times, density: int, n_paths: int, seed: int,
                    barrier: str = "grid", chunk: int = 4000, densities=None) -> dict:
    """Estimate E[martingale at t] for each t in ``times``.

    Paths are drawn under the drift-gamma law, where the martingale times
    the likelihood ratio is (beta - B_0 - W_t) e^{gamma B_0} times the
    survival indicator, so the estimator has bounded relative variance.
    barrier="grid" checks survival at the grid points only (the discrete
    martingale); barrier="bridge" multiplies by the exact probability that
    the Brownian bridge between grid points does not cross, which gives
    the continuum barrier.

    ``densities`` (multiples of the base density, e.g. (1, 2)) evaluates
    coarser grids on the same fine paths for a common-random-number
    refinement comparison. Returns {density: {t: (values per path)}}.
    """
    times = sorted(float(t) for t in times)
    mults = tuple(densities or (1,))
    fine = density * max(mults)
    for m in mults:
        if max(mults) % m:
            raise ValueError("densities must divide the finest one")
    T = times[-1]
    n_steps = int(round(T * fine))
    if not np.isclose(n_steps / fine, T):
        raise ValueError("horizon must be a whole number of fine steps")
    tk = np.arange(n_steps + 1) / fine
    idx_t = {t: int(round(t * fine)) for t in times}
    out = {density * m: {t: [] for t in times} for m in mults}
    g, b = tilt.gamma, tilt.beta
    for c0 in range(0, n_paths, chunk):
        n = min(chunk, n_paths - c0)
        rng = stream(seed, c0 // chunk, _L_PATH)
        b0 = tilt.start_law.sample(stream(seed, c0 // chunk, _L_START), n)
        W = np.concatenate([np.zeros((n, 1)), np.cumsum(rng.standard_normal((n, n_steps)) / np.sqrt(fine), 1)], 1)
        gap = (b - b0)[:, None] - W  # = -B_u + gamma u + beta under the drifted law
        weight0 = np.exp(g * b0)
        for m in mults:
            stride = max(mults) // m
            sub = gap[:, ::stride]
            dt = stride / fine
            for t in times:
                k = idx_t[t] // stride
                seg = sub[:, : k + 1]
                if barrier == "grid":
                    surv = np.all(seg > 0, axis=1).astype(float)
                elif barrier == "bridge":
                    surv = _bridge_survival(seg, dt) if k > 0 else (seg[:, 0] > 0).astype(float)
                else:
                    raise ValueError(f"unknown barrier mode {barrier!r}")
                out[density * m][t].append(np.maximum(seg[:, -1], 0.0) * surv * weight0)
    return {d: {t: np.concatenate(v) for t, v in per.items()} for d, per in out.items()}


def martingale_start_mean(tilt: TiltSpec, seed: int, n: int = 200_000) -> float:
    """E[martingale at 0] = E[(beta - B_0)^+ e^{gamma B_0}]; exact for a fixed start."""
    law = tilt.start_law
    if law.kind == "fixed":
        b0 = law.value
        return max(tilt.beta - b0, 0.0) * float(np.exp(tilt.gamma * b0))
    b0 = law.sample(stream(seed, 0, _L_AUX), n)
    return float(np.mean(np.maximum(tilt.beta - b0, 0) * np.exp(tilt.gamma * b0)))


# ---- Bessel(3) moment estimators --------------------------------------------

ENVELOPE_R = (2.0, 4.0, 8.0)


def envelope_inside(path: Path, R: float, horizon: float | None = None) -> np.ndarray:
    """Per path: sqrt(u)/(R log(2+u)^2) <= X_u <= R(1 + sqrt(u log(1+u))) at every grid u <= horizon."""
    u = path.times
    sel = u <= (horizon if horizon is not None else u[-1]) + 1e-12
    u, X = u[sel], path.values[:, sel]
    lo = np.sqrt(u) / (R * np.log(2 + u) ** 2)
    hi = R * (1 + np.sqrt(u * np.log1p(u)))
    return np.all((X >= lo) & (X <= hi), axis=1)


def bessel_moment_suite(paths: Path, t: float, R_values=ENVELOPE_R) -> dict:
    """E[1/X_t], E[1/X_t^2], E[(1/X_t) 1{X_t <= t^{1/4}}] with SEs, the fitted
    constant C = 2 t E[(1/X_t) 1{...}], and envelope hit rates per R."""
    if paths.values.shape[0] == 0:
        raise ValueError("empty path set")
    X = paths.at(t)
    inv = _est(1.0 / X)
    inv2 = _est(1.0 / X ** 2)
    trunc = _est(np.where(X <= t ** 0.25, 1.0 / X, 0.0))
    hits = {float(R): float(envelope_inside(paths, R, t).mean()) for R in R_values}
    return {"t": t, "inv": inv, "inv2": inv2, "trunc": trunc, "C_fit": 2 * t * trunc.mean, "envelope": hits}


def inverse_moment_bound(t: float, m1: float, m2: float) -> float:
    """Allowed deviation of E[1/X_t] from sqrt(2/(pi t)) given E[X_0] = m1, E[X_0^2] = m2."""
    return 2.0 / np.sqrt(t) * (m2 / t + m1 / np.sqrt(t))


# ---- rooted radial law -------------------------------------------------------

def size_biased_start(base: StartLaw, shift: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw W = shift - B_0 from the law with density proportional to w p(w) on w > 0."""
    if base.kind == "fixed":
        w = shift - base.value
        if w <= 0:
            raise ValueError("fixed start lies on the wrong side of the barrier")
        return np.full(n, w)
    out = np.empty(0)
    if base.bounded:
        lo, hi = (base.lo, base.hi)
        w_max = shift - lo
        if w_max <= 0:
            raise ValueError("start law lies entirely beyond the barrier")
        while out.size < n:
            w = shift - base.sample(rng, 2 * (n - out.size) + 16)
            acc = rng.uniform(size=w.size) * w_max < w
            out = np.concatenate([out, w[acc & (w > 0)]])
        return out[:n]
    # Gaussian W ~ N(mu, s^2): propose from N(mu, 2 s^2), accept by w phi_s / (c phi_{sqrt2 s})
    mu, s = shift - base.mean, base.sd
    grid = np.linspace(max(mu - 12 * s, 0.0), mu + 12 * s + 1e-9, 4001)
    ratio = lambda w: w * stats.norm.pdf(w, mu, s) / stats.norm.pdf(w, mu, np.sqrt(2) * s)
    c = 1.05 * float(ratio(grid).max())
    while out.size < n:
        w = rng.normal(mu, np.sqrt(2) * s, 2 * (n - out.size) + 16)
        w = w[w > 0]
        acc = rng.uniform(size=w.size) * c < ratio(w)
        out = np.concatenate([out, w[acc]])
    return out[:n]


def rooted_radial_sampler(deltas, rho, tilt: TiltSpec, d: int, seed: int, n_paths: int = 1,
                          replica: int = 0, eps0: float | None = None) -> Path:
    """Radial process f~ at the root under the rooted law.

    ``deltas`` decreases from eps0 to eps; the clock is t = log(eps0/delta).
    f~ - rho is Bessel(3) in that clock from a size-biased start
    W_0 = beta - rho(eps0) - B_0 (B_0 from tilt.start_law); the returned
    path is f~ = Bessel + rho, indexed by t.
    """
    del d  # the clock is the variance clock, the same in every dimension
    deltas = np.asarray(deltas, dtype=float)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), deltas.shape)
    if np.any(np.diff(deltas) >= 0):
        raise ValueError("deltas must decrease")
    e0 = deltas[0] if eps0 is None else eps0
    t = np.log(e0 / deltas)
    w0 = size_biased_start(tilt.start_law, tilt.beta - rho[0], stream(seed, replica, _L_START), n_paths)
    X = sample_bessel3(t, w0, seed, n_paths, replica)
    return Path(t, X.values + rho[None, :], "rooted")


def importance_inverse_moment(T: float, tilt: TiltSpec, density: int, n_paths: int, seed: int) -> Estimate:
    """E_Q[1/X_T] by reweighting plain Brownian paths with the martingale / its start mean.

    Survival between grid points uses the Brownian-bridge probability so the
    barrier is the continuum one, matching the exact Bessel law.
    """
    n_steps = int(round(T * density))
    t = np.arange(n_steps + 1) / density
    g, b = tilt.gamma, tilt.beta
    b0 = tilt.start_law.sample(stream(seed, 0, _L_START), n_paths)
    P = sample_brownian(t, b0, seed, n_paths)
    x = -P.values + g * t + b
    surv = _bridge_survival(x, 1.0 / density)
    mart = np.maximum(x[:, -1], 0) * surv * np.exp(g * P.values[:, -1] - 0.5 * g * g * T)
    z0 = martingale_start_mean(tilt, seed)
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(mart > 0, mart / np.maximum(x[:, -1], 1e-300), 0.0) / z0
    return _est(contrib)


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    c = np.sqrt(-0.5 * np.log(alpha / 2))
    return float(c * np.sqrt((n + m) / (n * m)))


def ks_two_sample(a, b) -> tuple[float, float]:
    r = stats.ks_2samp(a, b)
    return float(r.statistic), float(r.pvalue)


# ---- Z ratio at a point -----------------------------------------------------

@dataclass(frozen=True)
class ZRatio:
    eps: float
    beta: float
    Z: Estimate
    Z_tilde: Estimate
    ratio: float
    ratio_se: float

    def as_dict(self):
        return {"eps": self.eps, "beta": self.beta, "Z": self.Z.as_dict(), "Z_tilde": self.Z_tilde.as_dict(),
                "ratio": self.ratio, "ratio_se": self.ratio_se}


def z_ratio_estimate(K, theta, eps: float, beta: float, x, replicas: int, seed: int,
                     eps0: float = 0.5, per_octave: int = 8) -> ZRatio:
    """Z = E[f e^g 1_L 1{f>1}] and Z~ = E[f~ e^g 1_L] at one point, and their ratio.

    The exponential weight e^g is absorbed exactly: under it the Gaussian
    vector (h_eps, h~_delta) is shifted by gamma cov(h_eps, .), so samples
    are drawn from the shifted law and carry no weights.
    """
    from .fields import ComparisonCoefficients, comparison_coefficients, covariance_matrix, tilde_functional, convolution
    from .stargrid import delta_schedule

    d = K.dimension
    g = np.sqrt(2.0 * d)
    deltas = delta_schedule(eps0, eps, per_octave)
    co: ComparisonCoefficients = comparison_coefficients(K, theta, eps, deltas, x, g)
    descs = [convolution(theta, eps, x, "h")] + [tilde_functional(K, dl, x, f"t{j}") for j, dl in enumerate(deltas)]
    C = covariance_matrix(K, descs)
    w, V = np.linalg.eigh(C)
    if w.min() < -1e-8 * w.max():
        raise np.linalg.LinAlgError("covariance of the radial functionals is indefinite")
    L = V * np.sqrt(np.clip(w, 0.0, None))
    shift = g * C[0]
    rng = stream(seed, 0, _L_PATH)
    Z = rng.standard_normal((replicas, C.shape[0])) @ L.T + shift
    h, tl = Z[:, 0], Z[:, 1:]
    lam = co.lambda_eps
    ok = np.all(-tl + g * lam * co.tilde_var + beta - co.rho > 0, axis=1)
    f = -h + g * co.var_conv + beta
    ft = -tl[:, -1] + g * lam * co.tilde_var[-1] + beta
    a = np.where(ok & (f > 1.0), f, 0.0)
    b = np.where(ok, ft, 0.0)
    Za, Zb = _est(a), _est(b)
    r = Za.mean / Zb.mean
    # delta method for a ratio of correlated means
    cov_ab = np.cov(a, b)[0, 1] / replicas
    var_r = r * r * (Za.se ** 2 / Za.mean ** 2 + Zb.se ** 2 / Zb.mean ** 2 - 2 * cov_ab / (Za.mean * Zb.mean))
    return ZRatio(eps, beta, Za, Zb, float(r), float(np.sqrt(max(var_r, 0.0))))
