"""Scikit-learn style generative estimators.

>>> from progdiff.datasets import sample_dataset
>>> X = sample_dataset("eight-gaussians", 2000, 0)
>>> model = TDCDiffusion(stage1_steps=500, stage2_steps=100).fit(X)   # doctest: +SKIP
>>> model.sample(10).shape                                           # doctest: +SKIP
(10, 2)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_samples, check_seed, check_timestep
from .config import config_from_dict
from .pipeline import load_data, make_plan, make_schedule, tdc_train, train_base
from .sampling import ModelBank, ddim_sample, energy_distance


class DiffusionMLP(BaseEstimator):
    """Single MLP denoiser trained over every timestep.

    Parameters
    ----------
    schedule : {"cosine", "linear"}
    n_timesteps : int
        Length ``T`` of the diffusion chain.
    hidden_widths : tuple of int
    time_embed_dim : int
    stage1_steps : int
        Adam steps over all timesteps.
    batch_size : int
    learning_rate : float
    sampling_steps : int
        DDIM steps used by :meth:`sample`.
    random_state : int or None

    Attributes
    ----------
    params_ : Parameters
    schedule_ : NoiseSchedule
    n_features_in_ : int
    """

    def __init__(self, schedule="cosine", n_timesteps=100, hidden_widths=(64, 64, 64), time_embed_dim=16,
                 stage1_steps=5000, batch_size=128, learning_rate=1e-3, sampling_steps=50, random_state=0):
        self.schedule = schedule
        self.n_timesteps = n_timesteps
        self.hidden_widths = hidden_widths
        self.time_embed_dim = time_embed_dim
        self.stage1_steps = stage1_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.sampling_steps = sampling_steps
        self.random_state = random_state

    def _config(self, seed: int, extra: dict | None = None):
        d = {
            # the generator name is a placeholder; fit() always passes X explicitly
            "dataset": {"name": "eight-gaussians"},
            "schedule": {"kind": self.schedule, "T": int(self.n_timesteps)},
            "model": {"hidden_widths": [int(w) for w in self.hidden_widths],
                      "time_embed_dim": int(self.time_embed_dim)},
            "training": {"seed": seed, "stage1_steps": int(self.stage1_steps), "batch_size": int(self.batch_size),
                         "lr": float(self.learning_rate)},
            "sampling": {"steps": int(self.sampling_steps)},
        }
        for section, fields in (extra or {}).items():
            d.setdefault(section, {}).update(fields)
        return config_from_dict(d)

    def fit(self, X, y=None):
        X = check_samples(X)
        self.n_features_in_ = X.shape[1]
        self.config_ = self._config(check_seed(self.random_state))
        self.schedule_ = make_schedule(self.config_)
        self.params_, self.train_info_ = train_base(self.config_, data=X, schedule=self.schedule_)
        return self

    def _bank(self):
        return ModelBank.single(self.params_, self.schedule_.T)

    def predict_noise(self, X_t, t):
        """Noise estimate for noisy inputs ``X_t`` at timestep(s) ``t``."""
        check_is_fitted(self)
        X_t = check_samples(X_t, min_samples=1)
        t = np.broadcast_to(check_timestep(t, self.schedule_.T), (len(X_t),))
        bank = self._bank()
        out = np.empty_like(X_t)
        for tt in np.unique(t):
            rows = t == tt
            out[rows] = bank.predict(X_t[rows], int(tt))
        return out

    def sample(self, n_samples=1, random_state=None):
        """Draw samples with deterministic DDIM."""
        check_is_fitted(self)
        seed = check_seed(self.random_state if random_state is None else random_state)
        return ddim_sample(self._bank(), self.schedule_, int(self.sampling_steps), int(n_samples), seed,
                           dim=self.n_features_in_)

    def score(self, X, y=None):
        """Negative energy distance between ``X`` and as many generated samples."""
        X = check_samples(X, min_samples=1)
        return -energy_distance(self.sample(len(X)), X)


class TDCDiffusion(DiffusionMLP):
    """Timestep-grouped denoisers trained in two stages.

    Timesteps are grouped by SNR difficulty into ``n_groups`` FLOPs tiers
    between ``k`` and 1 times the base model cost. A base model is trained
    on every timestep, then copied per group, pruned to the group's FLOPs
    limit (``prune=True``) and fine-tuned on the group's timesteps.

    Additional Parameters
    ---------------------
    n_groups : int
    k : float in (0, 1]
    prune : bool
    proxy : {"magnitude", "taylor", "random", "llm"}
    n_rounds, n_candidates : int
        Proxy search rounds and candidates per round.
    stage2_steps : int
        Fine-tuning steps per group.
    finetune_learning_rate : float
    flops_shape : {"snr", "constant", "uni-increasing", "uni-decreasing"}

    Attributes
    ----------
    plan_ : GroupPlan
    model_bank_ : ModelBank
    report_ : RunReport
    """

    def __init__(self, schedule="cosine", n_timesteps=100, hidden_widths=(64, 64, 64), time_embed_dim=16,
                 stage1_steps=5000, batch_size=128, learning_rate=1e-3, sampling_steps=50, random_state=0,
                 n_groups=5, k=0.5, prune=True, proxy="magnitude", n_rounds=5, n_candidates=3,
                 stage2_steps=1000, finetune_learning_rate=1e-4, flops_shape="snr"):
        super().__init__(schedule, n_timesteps, hidden_widths, time_embed_dim, stage1_steps, batch_size,
                         learning_rate, sampling_steps, random_state)
        self.n_groups = n_groups
        self.k = k
        self.prune = prune
        self.proxy = proxy
        self.n_rounds = n_rounds
        self.n_candidates = n_candidates
        self.stage2_steps = stage2_steps
        self.finetune_learning_rate = finetune_learning_rate
        self.flops_shape = flops_shape

    def fit(self, X, y=None, out=None):
        X = check_samples(X)
        self.n_features_in_ = X.shape[1]
        self.config_ = self._config(check_seed(self.random_state), {
            "allocation": {"k": float(self.k), "groups": int(self.n_groups), "shape": self.flops_shape},
            "pruning": {"enabled": bool(self.prune), "proxy": self.proxy, "rounds": int(self.n_rounds),
                        "candidates": int(self.n_candidates)},
            "training": {"stage2_steps": int(self.stage2_steps),
                         "finetune_lr": float(self.finetune_learning_rate)},
            "sampling": {"n_samples": min(2000, len(X))},
        })
        self.schedule_ = make_schedule(self.config_)
        self.plan_ = make_plan(self.config_, self.schedule_, X.shape[1])
        self.report_, self.model_bank_ = tdc_train(self.config_, out=out, data=load_data(self.config_, X))
        self.params_ = self.model_bank_.fallback
        return self

    def _bank(self):
        return self.model_bank_
