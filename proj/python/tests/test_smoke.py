import pathlib

import numpy as np
import pytest

import pfvi

DATA = pathlib.Path(__file__).resolve().parents[2] / "data"


@pytest.fixture(scope="module")
def toy():
    return pfvi.Model.from_csv(str(DATA / "toy.csv"), str(DATA / "toy_schema.json"))


def test_model_shape(toy):
    assert toy.n == 80
    assert toy.block_names == ["(fixed)", "site", "batch"]
    assert toy.num_params == 2 + 6 + 5
    assert toy.resolve_partition("uf") == "C={0,1,2} U={}"


def test_fit_report(toy):
    fit = toy.fit("pf:fixed")
    assert fit.converged
    rep = fit.report()
    assert rep["converged"] is True
    assert rep["partition"]["describe"] == "C={0} U={1,2}"
    assert len(fit.elbo_trace) == fit.iterations + 1
    assert np.all(np.diff(fit.elbo_trace) >= -1e-9)


def test_fixed_phi_means_agree_across_families(toy):
    means = [toy.fit(p, tol=0.0, max_iter=3000, update_phi=False).mean() for p in ("ff", "pf:fixed", "uf")]
    for m in means[1:]:
        np.testing.assert_allclose(m, means[0], rtol=1e-7, atol=1e-9)


def test_uqf_matches_numpy(toy):
    fit = toy.fit("pf:fixed")
    cov = fit.target_covariance()
    qp = fit.precision()
    lam = np.linalg.eigvals(np.linalg.solve(np.linalg.inv(cov), qp)).real
    assert fit.uqf() == pytest.approx(1.0 / lam.max(), rel=1e-8)
    assert pfvi.uqf_analytic(cov, qp) == pytest.approx(fit.uqf(), rel=1e-12)
    uf = toy.fit("uf")
    np.testing.assert_allclose(uf.covariance(), uf.target_covariance(), rtol=1e-8, atol=1e-12)
    assert toy.fit("ff").uqf() < fit.uqf() <= 1.0 + 1e-12


def test_gibbs_and_split_sample(toy):
    draws = toy.gibbs(iters=4000, burn_in=200, seed=3)
    assert draws.shape == (4000, toy.num_params)
    value, folds = pfvi.uqf_split_sample(draws, toy.fit("pf:fixed").precision())
    assert len(folds) == 5
    assert 0.0 < value <= 1.5


def test_nested_bounds():
    m = pfvi.Model.from_csv(str(DATA / "nested.csv"), str(DATA / "nested_schema.json"))
    assert m.bounds()["lambda_aux"] == pytest.approx(1.0, abs=1e-9)
    assert m.resolve_partition("pf:auto") == "C={0,1} U={2}"


def test_random_scan_and_rg():
    Q = np.array([[1.0, 0.5], [0.5, 1.0]])
    rep = pfvi.duality_check(Q, np.zeros(2), [1, 1], sweeps=10, runs=4000, seed=2)
    assert rep["uqf"] == pytest.approx(0.5)
    assert rep["bracket_satisfied"]
    n, g = 8 * 64, 64
    assert pfvi.rg_bound(n, g, g) == pytest.approx(1.0 - np.sqrt(2.0 * np.sqrt(g / n)))


def test_simulated_models():
    m = pfvi.Model.simulate(10, 12, missing=0.5, seed=4)
    assert m.fit("pf:auto").converged
    b = pfvi.Model.simulate_biregular(64, 4, 4, seed=5)
    assert b.n == 64
    assert pfvi.tv_accuracy(np.arange(200.0), np.arange(200.0)) > 0.99


def test_errors(toy):
    with pytest.raises(pfvi.PfviError):
        toy.fit("nosuchfactor")
    with pytest.raises(pfvi.PfviError):
        pfvi.Model.from_csv_text("y,g\n1,a\n", '{"response": "y", "factors": [{"name": "h"}]}')
