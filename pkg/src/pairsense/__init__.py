"""pairsense: simulation + learning workbench for tactile sensors built on
spatially overlapping terminal-pair signals.

Physical forward models (total-internal-reflection ray casting for optical
builds, resistor-lattice nodal analysis for resistive builds) generate
all-pairs signal frames under controlled indentations; a self-contained
learning stack maps those frames to contact location, depth, touch state and
indenter class; the evaluation layer reproduces the reference error tables,
terminal-removal ablations and leave-one-tip-out folds.
"""

from .geometry import (
    AMBIENT_STATE,
    IndenterTip,
    NoiseParams,
    PairIndex,
    SensorConfig,
    Terminal,
    all_tips,
    build_layout,
    corner_tip,
    disc_tip,
    edge_tip,
    enumerate_pairs,
    hemisphere_tip,
    sensing_area,
    tip_from_class,
)
from .mechanics import IndentationPose, SurfaceField, deform, depth_to_force, flat_field, strain_field

__version__ = "0.1.0"

__all__ = [
    "AMBIENT_STATE",
    "IndenterTip",
    "NoiseParams",
    "PairIndex",
    "SensorConfig",
    "Terminal",
    "all_tips",
    "build_layout",
    "corner_tip",
    "disc_tip",
    "edge_tip",
    "enumerate_pairs",
    "hemisphere_tip",
    "sensing_area",
    "tip_from_class",
    "IndentationPose",
    "SurfaceField",
    "deform",
    "depth_to_force",
    "flat_field",
    "strain_field",
    "__version__",
]
