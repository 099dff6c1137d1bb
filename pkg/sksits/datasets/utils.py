"""
utils methods for sksits.datasets
"""

import numpy as np
import pandas as pd


def describe(samples):
    """Give some high level properties on a set of sequences

    ========================    ===============
    Number of samples           int
    Average sequence length     float
    Number of parcels           int
    Void ratio                  float in [0, 1]
    Class counts                pd.Series
    ========================    ===============

    Parameters
    ----------
    samples: list of SITSSample

    Notes
    -----
        .. math:: void\\_ratio = { n\\_void\\_parcels \\over n\\_parcels }

    Example
    -------
    >>> from sksits.datasets import GenConfig, generate_dataset
    >>> from sksits.datasets.utils import describe
    >>> describe(generate_dataset(GenConfig(), 10))  # doctest: +SKIP
    {'n_samples': 10, 'avg_length': 12.1, 'n_parcels': 91, 'void_ratio': 0.18,
    'class_counts': ...}
    """
    samples = list(samples)
    parcels = [p for s in samples for p in s.parcels]
    valid = [p.crop_class for p in parcels if not p.is_void]
    return dict(
        n_samples=len(samples),
        avg_length=float(np.mean([s.T for s in samples])) if samples else 0.0,
        n_parcels=len(parcels),
        void_ratio=(len(parcels) - len(valid)) / len(parcels) if parcels else 0.0,
        class_counts=pd.Series(valid, dtype="int64").value_counts().sort_index(),
    )
