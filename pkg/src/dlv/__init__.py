"""Discretized layer-wise safety verification for small feed-forward classifiers."""

from .network import (
    LayerSpec,
    Network,
    classify,
    classify_batch,
    classify_from_stage,
    forward,
    forward_batch,
    forward_from,
    output_logits,
    stage_apply,
)
from .gradients import gradient_input, jacobian_output_input
from .geometry import (
    HyperRectangle,
    Ladder,
    Manipulation,
    Region,
    apply_manipulation,
    generate_manipulation_set,
    is_minimal_at_granularity,
    is_valid_manipulation_set,
    rec,
)
from .weights_io import load_network, save_network
from .metrics import diff_class, l_distance, robustness_report
from .search import (
    PRESETS,
    FeaturePartition,
    SearchConfig,
    Verdict,
    VerificationOutcome,
    brute_force_oracle,
    partition_features,
    single_path_search,
    verify_0_variation,
)
from .mcts import mcts_search
from .preimage import (
    PreimageQuery,
    map_back_to_input,
    preimage_maxpool_combined,
    preimage_step,
    reconstruct_input,
)
from .refinement import (
    DimensionSelection,
    RefinementCertificate,
    check_region_covers,
    grow_region,
    refine_manipulations,
    refinement_residual,
    run_algorithm1,
    select_dims_next,
    select_dims_start,
)
from .smtlib import export_constraints
from .attacks import AttackResult, fgsm, jsma

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
