"""Stateless signal transformers usable inside sklearn pipelines."""
from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin

from .errors import WrongLeadCount
from .signal_io import LEAD_INDICES, minmax_leads
from .validation import check_signals


class LeadSelector(TransformerMixin, BaseEstimator):
    """Pick leads I, II, V1..V6 out of 12-lead ``[n, 12, samples]`` input."""

    def __init__(self, indices=LEAD_INDICES, n_input_leads=12):
        self.indices = indices
        self.n_input_leads = n_input_leads

    def fit(self, X, y=None):
        check_signals(X, n_leads=None, n_samples=None)
        return self

    def transform(self, X):
        X = check_signals(X, n_leads=None, n_samples=None)
        if X.shape[1] != self.n_input_leads:
            raise WrongLeadCount(f"expected {self.n_input_leads} leads, got {X.shape[1]}")
        return X[:, list(self.indices)].copy()


class LeadMinMaxScaler(TransformerMixin, BaseEstimator):
    """Scale every lead of every record to [0, 1] on its own range.

    Nothing is learned in ``fit``: statistics are taken per record, and a
    flat lead maps to zeros.
    """

    def fit(self, X, y=None):
        check_signals(X, n_leads=None, n_samples=None)
        return self

    def transform(self, X):
        return minmax_leads(check_signals(X, n_leads=None, n_samples=None))
