import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from progdiff import DiffusionMLP, TDCDiffusion
from progdiff.datasets import sample_dataset

X = sample_dataset("eight-gaussians", 1000, 0)
SMALL = dict(n_timesteps=30, hidden_widths=(16, 16), time_embed_dim=4, stage1_steps=100, batch_size=32,
             sampling_steps=10)


def test_get_params_and_clone():
    est = TDCDiffusion(n_groups=3, k=0.4, **SMALL)
    params = est.get_params()
    assert params["n_groups"] == 3 and params["k"] == 0.4 and params["hidden_widths"] == (16, 16)
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(k=0.7)
    assert est.k == 0.7


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        DiffusionMLP(**SMALL).sample(3)


def test_diffusion_mlp_fit_sample_score():
    est = DiffusionMLP(**SMALL).fit(X)
    assert est.n_features_in_ == 2
    s = est.sample(50, random_state=1)
    assert s.shape == (50, 2)
    assert np.array_equal(s, est.sample(50, random_state=1))
    assert est.score(X[:100]) <= 0
    noise = est.predict_noise(X[:5], [0, 1, 2, 3, 4])
    assert noise.shape == (5, 2)
    np.testing.assert_allclose(noise[2], est.predict_noise(X[2:3], 2)[0], rtol=1e-6)


def test_fit_is_deterministic():
    a = DiffusionMLP(**SMALL).fit(X)
    b = DiffusionMLP(**SMALL).fit(X)
    assert a.params_.equals(b.params_)


def test_tdc_estimator(tmp_path):
    est = TDCDiffusion(n_groups=3, stage2_steps=20, n_rounds=1, n_candidates=2, **SMALL).fit(X, out=tmp_path)
    assert est.plan_.N == 3
    assert len(est.report_.groups) == 3
    assert est.sample(20).shape == (20, 2)
    assert (tmp_path / "report.json").exists()
    for i, m in est.model_bank_.models.items():
        assert est.report_.groups[i]["flops"] <= est.report_.groups[i]["flops_limit"]


@pytest.mark.parametrize("bad", [np.array([[np.nan, 1.0], [0.0, 0.0]]), np.zeros((1, 2)), np.zeros(5)])
def test_input_validation(bad):
    with pytest.raises(ValueError):
        DiffusionMLP(**SMALL).fit(bad)


def test_parameter_validation():
    with pytest.raises(ValueError):
        TDCDiffusion(k=2.0, **SMALL).fit(X)
    with pytest.raises(ValueError):
        DiffusionMLP(random_state=-1, **{k: v for k, v in SMALL.items()}).fit(X)
    est = DiffusionMLP(**SMALL).fit(X)
    with pytest.raises(ValueError):
        est.predict_noise(X[:2], 30)
    with pytest.raises(TypeError):
        est.predict_noise(X[:2], 1.5)
