import numpy as np
import pytest
from hypothesis import given, strategies as st

from critchaos.mollifiers import (InvalidMollifier, MollifierSpec, cell_log_energy, check_cond_theta,
                                  is_admissible, make_density, make_uniform_circle, scaled_weights)

# -E log|X - Y| for X, Y uniform on the unit cell; d = 2 from a dblquad over the difference law
C1 = 1.5
C2 = 0.8050867219494344


def test_cell_energy_oracles():
    assert cell_log_energy(1) == pytest.approx(C1, abs=1e-10)
    assert cell_log_energy(2) == pytest.approx(C2, abs=1e-8)


@given(st.integers(8, 400))
def test_circle_is_probability(n):
    th = make_uniform_circle(n)
    assert th.mass == pytest.approx(1.0)
    np.testing.assert_allclose(np.linalg.norm(th.nodes, axis=1), 1.0)
    # the node self term cancels the discrete log energy of the roots of unity
    D = np.abs(np.exp(2j * np.pi * np.arange(1, n) / n) - 1)
    assert np.sum(np.log(D)) == pytest.approx(th.self_log, abs=1e-9)


def test_circle_needs_enough_nodes():
    with pytest.raises(InvalidMollifier):
        make_uniform_circle(4)


@given(st.sampled_from(["cosine_bump", "triangle", "smooth", "uniform"]), st.sampled_from([0.05, 0.1, 0.2]),
       st.sampled_from([1, 2]))
def test_density_is_probability(profile, h, d):
    th = make_density(profile, h, d)
    assert th.mass == pytest.approx(1.0)
    assert np.all(np.linalg.norm(th.nodes, axis=1) <= 1 + 1e-12)
    assert np.all(th.weights > 0)


def test_cond_theta_circle_centre():
    th = make_uniform_circle(64)
    assert check_cond_theta(th, v_grid=np.zeros((1, 2))) == pytest.approx(1.0)
    assert is_admissible(th)


def test_cond_theta_refines_to_a_limit():
    a = check_cond_theta(make_density("cosine_bump", 0.04, 2))
    b = check_cond_theta(make_density("cosine_bump", 0.02, 2))
    assert abs(a - b) < 0.01


def test_spike_is_flagged():
    coarse = make_density("spike", 1e-2, 1)
    fine = make_density("spike", 1e-4, 1)
    # a point mass: the clamped half-power sum grows like h^{-1/2}
    assert check_cond_theta(fine) > 100 > check_cond_theta(coarse)
    assert not is_admissible(fine)


def test_bad_configs():
    with pytest.raises(InvalidMollifier):
        make_density("nope", 0.1)
    with pytest.raises(InvalidMollifier):
        make_density("cosine_bump", 0.0)
    with pytest.raises(InvalidMollifier):
        make_density(lambda r: -1 + 0 * r, 0.1)
    with pytest.raises(InvalidMollifier):
        MollifierSpec.from_config({"kind": "blob"})
    with pytest.raises(ValueError):
        check_cond_theta(make_uniform_circle(8), v_grid=np.empty((0, 2)))


def test_scaled_weights():
    th = make_uniform_circle(8)
    pts, w = scaled_weights(th, 0.1, (0.2, 0.3))
    np.testing.assert_allclose(np.linalg.norm(pts - [0.2, 0.3], axis=1), 0.1)
    assert w.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        scaled_weights(th, 0.0, (0, 0))
