import numpy as np
import pytest
from scipy.special import erf

from critchaos import bessel as bs
from critchaos.rng import stream


def test_bessel_inverse_moment_from_a_point():
    # E_x[1/X_t] = erf(x / sqrt(2t)) / x for Bessel(3)
    P = bs.sample_bessel3([0.0, 1.0], 1.0, 3, 100_000)
    e = bs._est(1.0 / P.at(1.0))
    assert abs(e.mean - erf(1 / np.sqrt(2))) < 4 * e.se
    assert np.all(P.values > 0)


def test_brownian_increments():
    P = bs.sample_brownian([0.0, 0.5, 2.0], 1.0, 4, 50_000)
    assert P.at(2.0).mean() == pytest.approx(1.0, abs=4 * np.sqrt(2 / 50_000))
    assert P.at(2.0).var() == pytest.approx(2.0, rel=0.03)
    with pytest.raises(KeyError):
        P.at(1.0)
    with pytest.raises(ValueError):
        bs.sample_brownian([0.5, 1.0], 0.0, 1)


def test_start_laws():
    assert bs.martingale_start_mean(bs.TiltSpec(2.0, 1.0), 0) == 1.0
    assert bs.martingale_start_mean(bs.TiltSpec(2.0, 1.0, bs.StartLaw("fixed", value=-1.0)), 0) == \
        pytest.approx(2 * np.exp(-2.0))
    with pytest.raises(ValueError):
        bs.StartLaw("uniform", lo=1.0, hi=0.0)
    with pytest.raises(ValueError):
        bs.TiltSpec(0.0, 1.0)


def test_size_biased_uniform_mean():
    # W uniform on [1, 2], size-biased: mean (2/3)(b^3 - a^3)/(b^2 - a^2) = 14/9
    law = bs.StartLaw("uniform", lo=-1.0, hi=0.0)
    w = bs.size_biased_start(law, 1.0, stream(2), 100_000)
    assert w.mean() == pytest.approx(14 / 9, abs=4 * w.std() / np.sqrt(w.size))
    with pytest.raises(ValueError):
        bs.size_biased_start(bs.StartLaw("fixed", value=2.0), 1.0, stream(2), 10)


def test_martingale_bridge_mean_is_conserved():
    tilt = bs.TiltSpec(2.0, 1.0)
    r = bs.martingale_mean(tilt, [1.0, 2.0], 16, 20_000, seed=5, barrier="bridge")
    for t, v in r[16].items():
        e = bs._est(v)
        assert abs(e.mean - 1.0) < 4 * e.se


def test_grid_barrier_overshoots_and_refines():
    tilt = bs.TiltSpec(2.0, 1.0)
    r = bs.martingale_mean(tilt, [4.0], 8, 20_000, seed=6, barrier="grid", densities=(1, 2, 4))
    means = [r[d][4.0].mean() for d in (8, 16, 32)]
    # the discrete barrier lets paths through, and less so on finer grids (same paths)
    assert means[0] >= means[1] >= means[2] > 1.0 - 0.05


def test_moment_suite_and_bound():
    P = bs.sample_bessel3(np.linspace(0, 4, 41), 1.0, 1, 5000)
    s = bs.bessel_moment_suite(P, 4.0)
    assert s["inv2"].mean > s["inv"].mean ** 2
    assert s["C_fit"] == pytest.approx(8 * s["trunc"].mean)
    h = list(s["envelope"].values())
    assert h == sorted(h)
    assert bs.inverse_moment_bound(4.0, 1.0, 1.0) == pytest.approx(1.0 * (0.25 + 0.5))


def test_rooted_law_without_drift_is_bessel():
    tilt = bs.TiltSpec(1.0, 1.0)
    sched = np.exp(-np.linspace(0, 1.0, 33))
    R = bs.rooted_radial_sampler(sched, 0.0, tilt, 1, 4, 4000)
    B = bs.sample_bessel3([0.0, 1.0], 1.0, 5, 4000)
    ks, _ = bs.ks_two_sample(R.values[:, -1], B.values[:, -1])
    assert ks < bs.ks_critical(4000, 4000)
    assert R.times[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bs.rooted_radial_sampler(sched[::-1], 0.0, tilt, 1, 4, 10)


def test_ks_critical_value():
    assert bs.ks_critical(100, 100, 0.05) == pytest.approx(1.358 * np.sqrt(2 / 100), rel=1e-3)


def test_importance_estimate_matches_bessel():
    e = bs.importance_inverse_moment(1.0, bs.TiltSpec(1.0, 1.0), 32, 40_000, 7)
    assert abs(e.mean - erf(1 / np.sqrt(2))) < 4 * e.se
