"""Evaluation and post-processing of volumetric brain-tumour segmentations."""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .metrics import (  # noqa: E402
    CaseMetrics,
    LesionKind,
    LesionRecord,
    LesionwiseParams,
    dice,
    evaluate_case,
    hd95,
    lesionwise,
)
from .morphology import (  # noqa: E402
    ComponentMap,
    Connectivity,
    connected_components,
    dilate,
    distance_transform,
    interior_holes,
    surface_voxels,
)
from .postproc import (  # noqa: E402
    PipelineStages,
    PostprocRules,
    center_fill,
    ensemble_mean,
    remove_small_regions,
    run_pipeline,
    threshold_compose,
)
from .volume import (  # noqa: E402
    BinaryMask,
    Dims,
    LabelVolume,
    ProbVolume,
    RegionId,
    Spacing,
    compose_region,
    remap_labels,
    voxel_volume_mm3,
)
