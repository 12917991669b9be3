import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critchaos import fields as fl
from critchaos.kernels import KernelSpec, star_from_name
from critchaos.mollifiers import make_density

G = KernelSpec.gff_disk()
TRI = star_from_name("triangle", 0.5, 1)
KS = KernelSpec.star(TRI)
BUMP2 = make_density("cosine_bump", 0.2, 2)
BUMP1 = make_density("cosine_bump", 0.05, 1)


def gff_circle_cov(x, d1, d2):
    # circle averages of the disk Green function at a common centre
    return np.log(1.0 / max(d1, d2)) + np.log(1.0 - np.dot(x, x))


def test_circle_averages_are_brownian():
    x = np.array([0.2, -0.1])
    ds = [0.3, 0.1, 0.03, 0.01]
    C = fl.covariance_matrix(G, [fl.circle_average(d, x) for d in ds])
    exact = np.array([[gff_circle_cov(x, a, b) for b in ds] for a in ds])
    np.testing.assert_allclose(C, exact, atol=1e-12)


def test_identical_functionals_fully_correlated():
    A = fl.circle_average(0.05, (0.1, 0.1), "a")
    B = fl.circle_average(0.05, (0.1, 0.1), "b")
    C = fl.covariance_matrix(G, [A, B])
    assert C[0, 1] / np.sqrt(C[0, 0] * C[1, 1]) == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.sampled_from([0.02, 0.05, 0.1])),
                min_size=2, max_size=6))
def test_covariance_is_symmetric_psd(specs):
    descs = [fl.convolution(BUMP2, e, (x, y), f"f{i}") for i, (x, y, e) in enumerate(specs)]
    C = fl.covariance_matrix(G, descs)
    np.testing.assert_allclose(C, C.T)
    assert np.linalg.eigvalsh(C)[0] > -1e-8 * np.abs(C).max()


def test_sampling_is_keyed_by_replica():
    ens = fl.build_ensemble(KS, [fl.convolution(BUMP1, 0.05, (0.3,), "a"), fl.star_cutoff(0.05, (0.4,), "b")])
    S = fl.sample_many(ens, 7, 5)
    for r in range(5):
        np.testing.assert_array_equal(S[r], fl.sample(ens, 7, r).values)
    np.testing.assert_array_equal(fl.sample_many(ens, 7, 2, first=3), S[3:])
    assert not np.allclose(fl.sample(ens, 8, 0).values, S[0])


def test_empirical_covariance_matches():
    ens = fl.build_ensemble(KS, [fl.star_cutoff(0.01, (0.3,), "a"), fl.star_cutoff(0.1, (0.35,), "b")])
    S = fl.sample_many(ens, 3, 20000)
    emp = S.T @ S / len(S)
    C = ens.covariance
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / len(S))
    assert np.all(np.abs(emp - C) < 4 * se)


def test_ensemble_guards():
    with pytest.raises(ValueError):
        fl.build_ensemble(KS, [fl.star_cutoff(0.1, (0.3,), "a"), fl.star_cutoff(0.1, (0.4,), "a")])
    with pytest.raises(fl.FactorizationError):
        fl.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        fl.covariance_matrix(G, [fl.circle_average(0.5, (0.6, 0.0))])
    with pytest.raises(ValueError):
        fl.covariance_matrix(G, [fl.star_cutoff(0.1, (0.0, 0.0))])


def test_circle_mollifier_has_trivial_comparison():
    co = fl.comparison_coefficients(G, fl.circle(), 0.01, [0.5, 0.1, 0.03, 0.01], (0.1, 0.2))
    assert co.lambda_eps == pytest.approx(1.0, abs=1e-12)
    assert abs(co.var_Y) < 1e-10
    assert np.abs(co.rho).max() < 1e-10
    assert co.gamma == 2.0


def test_comparison_projection_is_orthogonal():
    co = fl.comparison_coefficients(KS, BUMP1, 0.01, [1.0, 0.1, 0.01], (0.5,))
    # Y = h - lambda h~ is uncorrelated with h~_eps, so rho vanishes at delta = eps
    assert co.rho_at(0.01) == pytest.approx(0.0, abs=1e-12)
    assert 0.9 < co.lambda_eps < 1.0
    assert co.var_Y > 0
    with pytest.raises(KeyError):
        co.rho_at(0.2)
    with pytest.raises(ValueError):
        fl.comparison_coefficients(KS, BUMP1, 0.01, [0.005], (0.5,))


def test_min_particle_single_scale():
    v = np.array([[0.3, 1.2, -0.5]])
    eps = 0.01
    assert fl.min_particle_statistic(v, [eps], 1) == pytest.approx(np.sqrt(2) * np.log(100) - 1.2)
    with pytest.raises(ValueError):
        fl.min_particle_statistic(v, [0.1, 0.01], 1)


def test_layered_star_sampler_variances():
    scales = [0.5, 0.1, 0.02]
    X = fl.sample_star_layers(TRI, [0.2, 0.5], scales, seed=11, n_samples=3000)
    var = X.var(axis=0)
    for j, e in enumerate(scales):
        # K_e(0) = log(1/e)
        assert np.all(np.abs(var[j] - np.log(1 / e)) < 5 * np.log(1 / e) * np.sqrt(2 / 3000))
    again = fl.sample_star_layers(TRI, [0.2, 0.5], scales, seed=11, n_samples=2, first=1)
    np.testing.assert_array_equal(again[0], X[1])


def test_increment_roughness_is_modest():
    pairs = [((0.5,), (0.5 + d,)) for d in (1e-4, 1e-3, 5e-3)]
    assert fl.increment_roughness(KS, BUMP1, 0.01, pairs) < fl.ROUGHNESS_GATE
    with pytest.raises(ValueError):
        fl.increment_roughness(KS, BUMP1, 0.01, [((0.5,), (0.6,))])


def test_csv_dump(tmp_path):
    ens = fl.build_ensemble(KS, [fl.star_cutoff(0.1, (0.3,), "a")])
    p = tmp_path / "s.csv"
    fl.write_samples_csv(p, [fl.sample(ens, 1, 0), fl.sample(ens, 1, 1)])
    lines = p.read_text().splitlines()
    assert lines[0] == "label,value,seed"
    assert lines[2].endswith(",1:1")
