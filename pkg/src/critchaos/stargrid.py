"""Layered FFT sampler for the one-dimensional star-scale field.

The field lives on a periodic lattice of spacing ``delta_lat``. Each scale
layer (K_{d_j} - K_{d_{j-1}}) is a stationary Gaussian field sampled
exactly by circulant embedding; the period is long enough that no
lattice distance used on the window wraps past the kernel support, so
joint laws on the window are exact. The finest layer stops at the lattice
spacing, so the underlying "full" field is h~ at that scale and
convolutions are exact sums over lattice points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .chaos import CellPartition
from .fields import ComparisonCoefficients, comparison_coefficients
from .kernels import KernelSpec, SeedFunction
from .mollifiers import PROFILES, make_density
from .rng import stream


def delta_schedule(eps0: float, eps_min: float, per_octave: int = 8) -> np.ndarray:
    """Geometric schedule from eps0 down to eps_min, ``per_octave`` points per halving."""
    n = int(round(np.log2(eps0 / eps_min) * per_octave))
    if not np.isclose(eps0 * 2.0 ** (-n / per_octave), eps_min, rtol=1e-9):
        raise ValueError("eps_min must be eps0 times a power of 2^(-1/per_octave)")
    return eps0 * 2.0 ** (-np.arange(n + 1) / per_octave)


def _spectral_noise(rng: np.random.Generator, M: int, batch: int, n_modes: int | None = None) -> np.ndarray:
    """First ``n_modes`` rfft coefficients of a length-M standard white noise,
    drawn directly in frequency space."""
    h = M // 2 + 1
    n = h if n_modes is None else n_modes
    z = rng.standard_normal((batch, 2, n))
    out = (z[:, 0] + 1j * z[:, 1]) * np.sqrt(M / 2.0)
    out[:, 0] = z[:, 0, 0] * np.sqrt(M)
    if n == h and M % 2 == 0:
        out[:, -1] = z[:, 0, -1] * np.sqrt(M)
    return out


@dataclass
class StarGrid:
    seed_fn: SeedFunction
    eps_min: float
    eps_list: tuple
    eps0: float = 1.0
    per_octave: int = 8
    window: tuple = (0.0, 1.0)
    lattice_factor: int = 4
    cell_factor: int = 4
    profile: str = "cosine_bump"
    # filled in __post_init__
    deltas: np.ndarray = field(init=False, repr=False)
    M: int = field(init=False)
    spacing: float = field(init=False)

    def __post_init__(self):
        if self.seed_fn.dimension != 1:
            raise ValueError("the lattice sampler is one-dimensional")
        if self.cell_factor % 2:
            raise ValueError("cell_factor must be even so cell centres are lattice points")
        self.eps_list = tuple(sorted(map(float, self.eps_list), reverse=True))
        if self.eps_list[-1] < self.eps_min * (1 - 1e-12):
            raise ValueError("every eps must be at least eps_min")
        self.spacing = self.eps_min / self.lattice_factor
        self.deltas = delta_schedule(self.eps0, self.eps_min, self.per_octave)
        for e in self.eps_list:
            if not np.any(np.isclose(self.deltas, e, rtol=1e-9)):
                raise ValueError(f"eps={e} is not on the barrier schedule")
        a, b = self.window
        S = self.seed_fn.support_radius
        span = max((b - a) + 2 * max(self.eps_list) + S, 2 * S)
        self.M = sfft.next_fast_len(int(np.ceil(span / self.spacing)) + 2, real=True)
        self.K = KernelSpec.star(self.seed_fn)
        self.K_lat = self.K.cutoff(self.spacing)

        m = np.arange(self.M)
        dist = np.minimum(m, self.M - m) * self.spacing
        # layer boundaries: 1 (K = 0), the delta schedule, then the lattice scale
        bounds = [1.0] + [d for d in self.deltas if d < 1.0] + [self.spacing]
        self._layer_end_delta = bounds[1:]
        # K_e(r) = log(1/e) + R(r) - R(r/e) for r < e S and the full kernel beyond
        R_r = self.seed_fn.log_remainder(dist)
        with np.errstate(divide="ignore"):
            full = np.where(dist < S, np.log(S / np.maximum(dist, 1e-300)) + R_r, 0.0)
        prev = np.zeros(self.M)
        sq, keep = [], []
        self.min_eig_rel = 0.0
        for e in bounds[1:]:
            cur = full.copy()
            m = dist < e * S
            cur[m] = np.log(1.0 / e) + R_r[m] - self.seed_fn.log_remainder(dist[m] / e)
            lam = np.fft.rfft(cur - prev).real
            prev = cur
            if lam.max() > 0:
                self.min_eig_rel = min(self.min_eig_rel, lam.min() / lam.max())
            lam = np.clip(lam, 0.0, None)
            # drop the high-frequency tail carrying < 1e-13 of the layer variance
            tail = np.cumsum(lam[::-1])[::-1]
            n_keep = int(np.searchsorted(-tail, -1e-13 * tail[0])) if tail[0] > 0 else 0
            keep.append(max(n_keep, 1))
            sq.append(np.sqrt(lam[:keep[-1]]))
        self._sqrt_eigs = sq
        self._keep = keep
        self._tilde_slots = {}
        for j, e in enumerate(self._layer_end_delta):
            hit = np.flatnonzero(np.isclose(self.deltas, e, rtol=1e-12))
            if hit.size:
                self._tilde_slots[j] = int(hit[0])
        # a schedule starting at 1 keeps h~_1 = 0 in row 0

        n_cells = int(round((b - a) / (self.cell_factor * self.spacing)))
        self.partition = CellPartition.interval(a, b, n_cells)
        self.cell_index = self.cell_factor // 2 + self.cell_factor * np.arange(n_cells)
        self.thetas = {}
        self._conv_spec = {}
        for e in self.eps_list:
            th = make_density(PROFILES[self.profile], self.spacing / e, 1)
            self.thetas[e] = th
            offs = np.rint(th.nodes[:, 0] * e / self.spacing).astype(int)
            w = np.zeros(self.M)
            np.add.at(w, offs % self.M, th.weights)
            self._conv_spec[e] = np.fft.rfft(w).conj()

    @property
    def x_cells(self) -> np.ndarray:
        return self.window[0] + self.cell_index * self.spacing

    def coefficients(self, gamma: float | None = None) -> dict[float, ComparisonCoefficients]:
        """Exact lambda / rho / variances of the lattice model for each eps."""
        out = {}
        x = (0.5 * (self.window[0] + self.window[1]),)
        for e in self.eps_list:
            sched = self.deltas[self.deltas >= e * (1 - 1e-12)]
            out[e] = comparison_coefficients(self.K_lat, self.thetas[e], e, sched, x, gamma)
        return out

    def sample(self, seed: int, replica: int, want_tilde: bool = True, batch: int = 1):
        """One replica: (tilde, conv) with tilde[j] = h~_{deltas[j]} and conv[eps] = h_eps on cells.

        ``batch`` > 1 draws replicas replica..replica+batch-1 together (same
        values as separate calls); arrays then carry a leading batch axis.
        """
        nb = batch
        acc = np.zeros((nb, self.M // 2 + 1), dtype=complex)
        n_cells = self.cell_index.size
        tilde = np.zeros((nb, len(self.deltas), n_cells)) if want_tilde else None
        for j, sq in enumerate(self._sqrt_eigs):
            if not sq.any():
                continue
            n = sq.size
            xi = np.concatenate([_spectral_noise(stream(seed, replica + b, j + 1), self.M, 1, n) for b in range(nb)])
            acc[:, :n] += sq * xi
            if want_tilde and j in self._tilde_slots:
                tilde[:, self._tilde_slots[j]] = np.fft.irfft(acc, self.M)[:, self.cell_index]
        conv = {e: np.fft.irfft(acc * W, self.M)[:, self.cell_index] for e, W in self._conv_spec.items()}
        if batch == 1:
            tilde = tilde[0] if want_tilde else None
            conv = {e: v[0] for e, v in conv.items()}
        return tilde, conv


@dataclass
class ConvSampler:
    """Direct circulant sampler of the single convolution field h_eps on cells.

    Same lattice model as StarGrid at one scale but with one spectral draw
    per replica, for experiments that never look at the scale layers.
    """

    seed_fn: SeedFunction
    eps: float
    window: tuple = (0.0, 1.0)
    lattice_factor: int = 4
    cell_factor: int = 4
    profile: str = "cosine_bump"

    def __post_init__(self):
        self.spacing = self.eps / self.lattice_factor
        a, b = self.window
        S = self.seed_fn.support_radius
        span = max((b - a) + 2 * self.eps + S, 2 * S)
        self.M = sfft.next_fast_len(int(np.ceil(span / self.spacing)) + 2, real=True)
        self.K_lat = KernelSpec.star(self.seed_fn).cutoff(self.spacing)
        m = np.arange(self.M)
        dist = np.minimum(m, self.M - m) * self.spacing
        lam = np.fft.rfft(np.asarray(self.K_lat.radial(dist))).real
        self.theta = make_density(PROFILES[self.profile], self.spacing / self.eps, 1)
        offs = np.rint(self.theta.nodes[:, 0] * self.eps / self.spacing).astype(int)
        w = np.zeros(self.M)
        np.add.at(w, offs % self.M, self.theta.weights)
        W = np.fft.rfft(w)
        self._sqrt = np.sqrt(np.clip(lam, 0, None)) * W.conj()
        n_cells = int(round((b - a) / (self.cell_factor * self.spacing)))
        self.partition = CellPartition.interval(a, b, n_cells)
        self.cell_index = self.cell_factor // 2 + self.cell_factor * np.arange(n_cells)
        # exact variance of h_eps in the lattice model
        nodes = self.theta.nodes[:, 0] * self.eps
        D = np.abs(nodes[:, None] - nodes[None, :])
        self.variance = float(self.theta.weights @ np.asarray(self.K_lat.radial(D)) @ self.theta.weights)

    def sample(self, seed: int, first: int, n: int) -> np.ndarray:
        xi = np.concatenate([_spectral_noise(stream(seed, first + r, 1), self.M, 1) for r in range(n)])
        return np.fft.irfft(self._sqrt * xi, self.M)[:, self.cell_index]
