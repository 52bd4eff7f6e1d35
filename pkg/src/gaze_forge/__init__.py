"""Task-oriented saliency and scanpath toolkit for surgical instrument video.

Library layout:

* :mod:`gaze_forge.raster`   — masks, maps, connected components, pooling
* :mod:`gaze_forge.saliency` — instrument dynamics, fixations, map rendering
* :mod:`gaze_forge.losses`   — batch transport loss, BCE, fusion, scheduling
* :mod:`gaze_forge.metrics`  — saliency/segmentation/scanpath evaluation
* :mod:`gaze_forge.blocks`   — reference network blocks with gradient checks
* :mod:`gaze_forge.io`       — file formats and dataset ingestion
* :mod:`gaze_forge.fixtures` — synthetic mask sequences
* :mod:`gaze_forge.cli`      — the ``gaze-forge`` command line
"""

__version__ = "0.1.0"

from .losses import (  # noqa: E402,F401
    LossReport,
    ScheduleState,
    batch_wasserstein,
    bce_loss,
    cross_entropy_seg,
    exact_ot_oracle,
    fused_saliency_loss,
    poly_weight,
    total_loss,
    two_phase_schedule,
)
from .metrics import (  # noqa: E402,F401
    MetricReport,
    auc_borji,
    dice,
    hausdorff,
    nss,
    scanpath_accuracy,
    similarity,
)
from .raster import (  # noqa: E402,F401
    Component,
    connected_components,
    downsample_half,
    normalize_to_distribution,
)
from .saliency import (  # noqa: E402,F401
    Fixation,
    PartDynamics,
    generate_scanpath,
    instrument_weights,
    part_dynamics,
    place_fixations,
    render_saliency,
)
