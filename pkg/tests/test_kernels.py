import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critchaos.kernels import (CoincidentPoints, InvalidSeed, KernelSpec, check_positive_definite,
                               discrete_green_disk, green_disk, kernel_log_remainder, seed_from_profile,
                               star_from_name, star_kernel_cutoff_eval, star_kernel_eval)

TRI = star_from_name("triangle", 0.5, 1)

# quad oracles: k = (g * g)/|g|^2 for g the unit-height triangle on [-0.5, 0.5],
# K(r) = int_1^inf k(ur)/u du, K_eps(r) = int_1^{1/eps} k(ur)/u du
K_SEED_03 = 0.622
K_SEED_07 = 0.054
K_STAR_01 = 1.1903989402974298
K_CUT_025_01 = 1.0622943611198905


def test_seed_matches_autocorrelation_oracle():
    assert TRI(0.0) == pytest.approx(1.0, abs=1e-13)
    assert TRI(0.3) == pytest.approx(K_SEED_03, abs=1e-12)
    assert TRI(0.7) == pytest.approx(K_SEED_07, abs=1e-12)
    assert TRI(1.0) == pytest.approx(0.0, abs=1e-12)
    assert TRI.support_radius == 1.0


def test_star_kernel_matches_quadrature():
    assert star_kernel_eval(TRI, 0.1) == pytest.approx(K_STAR_01, abs=1e-8)
    assert star_kernel_cutoff_eval(TRI, 0.1, 0.25) == pytest.approx(K_CUT_025_01, abs=1e-8)


def test_cutoff_at_zero_is_log():
    assert star_kernel_cutoff_eval(TRI, 0.0, 0.01) == pytest.approx(np.log(100.0), abs=1e-12)
    assert np.isinf(star_kernel_eval(TRI, 0.0))


def test_cutoff_equals_full_beyond_scale():
    # 1/eps > S/r: the truncation never bites
    r = np.array([0.3, 0.6, 0.9])
    np.testing.assert_allclose(star_kernel_cutoff_eval(TRI, r, 0.2), star_kernel_eval(TRI, r), atol=1e-13)
    assert star_kernel_eval(TRI, 1.5) == 0.0


def test_cutoff_rejects_bad_eps():
    for e in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ValueError):
            star_kernel_cutoff_eval(TRI, 0.1, e)


@given(st.floats(1e-4, 0.95), st.floats(1e-4, 0.5), st.floats(1e-4, 0.5))
def test_cutoff_increases_as_scale_shrinks(r, e1, e2):
    lo, hi = sorted((e1, e2))
    # the triangle seed is non-negative, so every extra scale adds variance
    assert star_kernel_cutoff_eval(TRI, r, lo) >= star_kernel_cutoff_eval(TRI, r, hi) - 1e-12
    assert star_kernel_eval(TRI, r) >= star_kernel_cutoff_eval(TRI, r, lo) - 1e-12


@given(st.floats(1e-6, 0.999))
def test_log_singularity_has_bounded_remainder(r):
    dev = star_kernel_eval(TRI, r) - np.log(1.0 / r)
    assert abs(dev) < 2.0


def test_green_closed_form():
    assert green_disk((0.0, 0.0), (0.5, 0.0)) == pytest.approx(np.log(2.0))
    # boundary vanishing
    assert green_disk((0.3, 0.2), (np.cos(1.0), np.sin(1.0)) ) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(CoincidentPoints):
        green_disk((0.1, 0.1), (0.1, 0.1))
    with pytest.raises(ValueError):
        green_disk((0.0, 0.0), (1.2, 0.0))


@given(st.tuples(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6)),
       st.tuples(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6)))
def test_green_symmetric_positive(x, y):
    if np.hypot(x[0] - y[0], x[1] - y[1]) < 1e-3:
        return
    a, b = green_disk(x, y), green_disk(y, x)
    assert a == pytest.approx(b, rel=1e-12)
    assert a > 0


def test_discrete_green_coarse_grid():
    h = 1.0 / 32
    P = np.array([[0.0, 0.0], [0.25, -0.25]])
    Q = np.array([[0.5, 0.0], [-0.25, 0.25]])
    rel = np.abs(discrete_green_disk(h, P, Q) / green_disk(P, Q) - 1)
    assert rel.max() < 0.02


def test_kernel_spec_dispatch_and_regular_part():
    K = KernelSpec.star(TRI)
    assert K(0.2, 0.5) == pytest.approx(star_kernel_eval(TRI, 0.3))
    Kc = K.cutoff(0.01)
    assert Kc.floor == 0.01
    assert Kc(0.2, 0.2) == pytest.approx(np.log(100.0))
    assert K.cutoff(0.1).cutoff(0.01).eps == 0.1
    assert kernel_log_remainder(K, 0.2, 0.5) == pytest.approx(star_kernel_eval(TRI, 0.3) + np.log(0.3))
    G = KernelSpec.gff_disk()
    assert G.regular_part((0.3, 0.0), (0.3, 0.0)) == pytest.approx(np.log(1 - 0.09))
    with pytest.raises(ValueError):
        G.cutoff(0.1)
    with pytest.raises(ValueError):
        KernelSpec("star")


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=30, unique=True))
def test_cutoff_gram_is_psd(xs):
    xs = np.array(xs)
    if np.min(np.diff(np.sort(xs))) < 1e-6:
        return
    lam = check_positive_definite(KernelSpec.star(TRI).cutoff(0.05), xs, self_eps=0.05)
    assert lam > -1e-9


def test_user_seed_needs_override():
    with pytest.raises(InvalidSeed):
        seed_from_profile(lambda r: np.exp(-r), 1.0)
    k = seed_from_profile(lambda r: np.clip(1 - r, 0, None), 1.0, override=True)
    assert k(0.0) == pytest.approx(1.0)


def test_seed_rejects_degenerate_profiles():
    from critchaos.kernels import seed_from_bump
    with pytest.raises(InvalidSeed):
        seed_from_bump(lambda r: 0 * r, 0.5)
    with pytest.raises(InvalidSeed):
        seed_from_bump(lambda r: 1 + 0 * r, -1.0)


def test_planar_seed_matches_double_integral():
    from scipy import integrate
    k2 = star_from_name("cosine", 0.5, 2)
    g = lambda x, y: np.cos(0.5 * np.pi * min(np.hypot(x, y) / 0.5, 1.0)) ** 2 * (np.hypot(x, y) <= 0.5)
    ac = lambda r: integrate.dblquad(lambda y, x: g(x, y) * g(x + r, y), -0.5, 0.5, -0.5, 0.5, epsabs=1e-11)[0]
    assert k2(0.4) == pytest.approx(ac(0.4) / ac(0.0), abs=1e-7)
