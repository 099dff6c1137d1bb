"""
The :mod:`sksits.datasets` module includes utilities to load datasets,
including a synthetic generator and a loader for PASTIS-layout directories.
"""
from ._samples_generator import (
    GenConfig,
    PhenologyProfile,
    generate_dataset,
    generate_layout,
    make_profiles,
    render_sequence,
)
from .pastis import (
    DatasetIndex,
    FoldScheme,
    PatchEntry,
    compute_norm_stats,
    fold_split,
    load_index,
    write_dataset,
)

from ._base import get_pastis_root
