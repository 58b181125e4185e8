"""Thin scikit-learn-style estimator wrappers over the functional core.

Each estimator's ``fit`` takes a :class:`~latentsurv.data.Dataset` (covariate
blocks carry structure a flat ``X`` matrix cannot), returns ``self``, and
exposes fitted attributes with trailing underscores. ``get_params`` /
``set_params`` follow the scikit-learn contract so the wrappers compose with
generic hyperparameter tooling.
"""

from __future__ import annotations

import numpy as np

from . import hazard, joint
from .data import Dataset
from .hazard import PenaltyConfig


class _BaseEstimator:
    _param_names: tuple[str, ...] = ()

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


class LatentSurvival(_BaseEstimator):
    """Latent-factor exponential-hazard survival model.

    ``fit_mode='fast'`` fits the factor model first and regresses hazards on
    posterior means; ``'full'`` runs Monte Carlo EM on the joint likelihood.
    """

    _param_names = ("d_z", "fit_mode", "gem_iters", "fa_max_iters", "seed")

    def __init__(self, d_z: int = 2, fit_mode: str = "fast", gem_iters: int = 10,
                 fa_max_iters: int = 100, seed: int = 0):
        self.d_z = d_z
        self.fit_mode = fit_mode
        self.gem_iters = gem_iters
        self.fa_max_iters = fa_max_iters
        self.seed = seed

    def fit(self, dataset: Dataset):
        if self.fit_mode == "fast":
            self.model_ = joint.fit_fast(dataset, self.d_z, seed=self.seed,
                                         fa_max_iters=self.fa_max_iters)
        elif self.fit_mode == "full":
            self.model_ = joint.fit_joint(dataset, self.d_z, gem_iters=self.gem_iters,
                                          seed=self.seed, fa_max_iters=self.fa_max_iters)
        else:
            raise ValueError(f"fit_mode must be 'fast' or 'full', got {self.fit_mode!r}")
        self.heywood_flag_ = self.model_.fa.heywood_flag
        return self

    def predict(self, dataset: Dataset) -> np.ndarray:
        """Expected event times for new samples (larger = lower risk)."""
        return joint.joint_predict(self.model_, dataset.blocks)


class L1ExponentialHazard(_BaseEstimator):
    """L1-penalized exponential hazard regression on stacked covariates."""

    _param_names = ("gamma", "penalize_intercept", "iterations")

    def __init__(self, gamma: float = 1.0, penalize_intercept: bool = True,
                 iterations: int = 5):
        self.gamma = gamma
        self.penalize_intercept = penalize_intercept
        self.iterations = iterations

    def fit(self, dataset: Dataset):
        penalty = PenaltyConfig(gamma_T=self.gamma, gamma_C=self.gamma,
                                penalize_intercept=self.penalize_intercept)
        self.params_T_, self.params_C_ = hazard.fit_ecph(
            dataset.stacked_values(), dataset.survival, penalty=penalty,
            iterations=self.iterations)
        return self

    def predict(self, dataset: Dataset) -> np.ndarray:
        """Expected event times 1/rate under the fitted event-hazard model."""
        return hazard.ecph_predict(self.params_T_, dataset.stacked_values())
