"""Single-point expectation of the cut-off ratio on the lattice star field.

Under the e^{gamma h_eps} tilt the vector (h_eps, h~_delta) is Gaussian with
mean gamma cov(h_eps, .), so E[M^beta] / E[D^beta] at one point reduces to
E[1_keep] / E[f 1_keep] under the shifted law. The Bessel(3) limit of the
radial part gives sqrt(T) erf(beta / sqrt(2T)) / beta with T = log(1/eps).
"""
import argparse

import numpy as np
from scipy.special import erf

from critchaos.kernels import star_from_name
from critchaos.rng import stream
from critchaos.stargrid import StarGrid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--betas", type=float, nargs="+", default=[5.0, 10.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    eps = (2.0 ** -6, 2.0 ** -10, 2.0 ** -14)
    grid = StarGrid(star_from_name("triangle", 0.5, 1), min(eps), eps)
    co = grid.coefficients()
    g = np.sqrt(2.0)
    rng = stream(args.seed)
    print(f"{'eps':>10} {'beta':>5} {'E-ratio':>8} {'bessel':>8}")
    for e in eps:
        c = co[e]
        J = len(c.deltas)
        C = np.empty((J + 1, J + 1))
        C[0, 0] = c.var_conv
        C[0, 1:] = C[1:, 0] = c.cov_conv_tilde
        C[1:, 1:] = np.log(1.0 / np.maximum.outer(c.deltas, c.deltas))
        w, V = np.linalg.eigh(C)
        L = V * np.sqrt(np.clip(w, 0.0, None))
        Z = rng.standard_normal((args.samples, J + 1)) @ L.T + g * C[0]
        h, t = Z[:, 0], Z[:, 1:]
        T = np.log(1.0 / e)
        for b in args.betas:
            ok = np.all(-t + g * c.lambda_eps * c.tilde_var + b - c.rho > 0, axis=1)
            f = -h + g * c.var_conv + b
            keep = ok & (f > 1.0)
            r = np.sqrt(T) * keep.mean() / (f * keep).mean()
            print(f"{e:10.3g} {b:5g} {r:8.4f} {np.sqrt(T) * erf(b / np.sqrt(2 * T)) / b:8.4f}")


if __name__ == "__main__":
    main()
