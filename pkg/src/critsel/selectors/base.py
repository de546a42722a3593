"""Shared selector surface.

Selectors are stateless sklearn-style transformers: ``fit`` is a no-op,
``transform`` maps a sequence of trajectories to a list of selections, and
hyperparameters live in ``__init__`` so ``get_params``/``set_params`` work
with the wider scikit-learn ecosystem (pipelines, grid search, cloning).
"""

from __future__ import annotations

from typing import Iterable

from sklearn.base import BaseEstimator, TransformerMixin

from ..trajectory import CriticalSelection, Trajectory


class BaseSelector(BaseEstimator, TransformerMixin):
    """Base class for critical-step selectors."""

    def fit(self, X: Iterable[Trajectory], y=None) -> "BaseSelector":
        return self

    def transform(self, X: Iterable[Trajectory]) -> list[CriticalSelection]:
        return [self.select(t) for t in X]

    def select(self, trajectory: Trajectory) -> CriticalSelection:
        raise NotImplementedError
