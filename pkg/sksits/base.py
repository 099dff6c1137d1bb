"""Base classes for all segmenters."""
# pylint: disable= unused-argument

import inspect
from abc import ABC, abstractmethod


class BaseSegmenter(ABC):
    """Base class for all segmenters in scikit-sits."""

    @abstractmethod
    def fit(self, samples, val_samples=None):
        """Fit method to be implemented."""
        return self

    @abstractmethod
    def predict(self, samples):
        """Predict method to be implemented."""
        return list()

    @classmethod
    def _get_param_names(cls):
        """Get parameter names for the estimator"""
        init = getattr(cls.__init__, "deprecated_original", cls.__init__)
        if init is object.__init__:
            return []

        init_signature = inspect.signature(init)
        parameters = [
            p
            for p in init_signature.parameters.values()
            if p.name != "self" and p.kind != p.VAR_KEYWORD
        ]
        return sorted([p.name for p in parameters])

    def get_params(self, deep=False):
        """
        Get parameters for this estimator.

        Returns
        -------
        params : mapping of string to any
            Parameter names mapped to their values.
        """
        return {key: getattr(self, key) for key in self._get_param_names()}

    def set_params(self, **params):
        """
        Set the parameters of this estimator.

        Parameters
        ----------
        **params : dict
            Estimator parameters.

        Returns
        -------
        self : object
            Estimator instance.
        """
        if not params:
            return self

        valid_params = self.get_params()
        for key, value in params.items():
            if key not in valid_params:
                raise ValueError(
                    "Invalid parameter %s for estimator %s. "
                    "Check the list of available parameters "
                    "with `estimator.get_params().keys()`." % (key, self)
                )
            setattr(self, key, value)

        return self

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({params})"


class FitPredictMixin:
    """Mixin for segmenters able to fit then predict on the same samples"""

    def fit_predict(self, samples, val_samples=None, **kwargs):
        """
        Fit to samples, then predict their label maps

        Parameters
        ----------
        samples: list of SITSSample
        val_samples: list of SITSSample, default=None
            used for model selection if provided

        Returns
        -------
        list
            one prediction per sample
        """
        return self.fit(samples, val_samples=val_samples).predict(samples, **kwargs)
