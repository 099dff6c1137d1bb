"""
The :mod:`sksits.panoptic` module implements the Parcels-as-Points
panoptic head and the conversion of its proposals into panoptic maps.
"""
from .merge import (
    PanopticMap,
    binarize,
    load_panoptic,
    panoptic_from_proposals,
    resolve_overlaps,
    save_panoptic,
    to_panoptic,
    tune_quality_threshold,
)
from .paps import (
    PanopticUTAE,
    PaPs,
    PaPsConfig,
    PaPsLoss,
    Proposal,
    ProposalSet,
    assemble_shape,
    assign_centers,
    build_heatmap_target,
    center_loss,
    detect_centers,
    dump_proposals,
    extract_multiscale_features,
)
