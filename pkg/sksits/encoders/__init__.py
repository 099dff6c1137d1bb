"""
The :mod:`sksits.encoders` module gathers spatio-temporal encoders
for satellite image time series.
"""
from .ltae import LTAE2d, PositionalEncoder
from .utae import (
    ABLATIONS,
    UTAE,
    FeaturePyramid,
    UTAEConfig,
    count_parameters,
    interpolate_masks,
    semantic_loss,
    temporal_collapse,
)
