"""Instrumented SGD for small ReLU networks.

Trains scalar-output MLPs while recording, at every iteration, the
first-layer bias update normalized by step size and loss slope. That
per-step statistic sandwiches the local Lipschitz constant of the
network at the sampled point, which makes the training log itself a
complexity probe: the package audits those sandwich bounds along
trajectories, turns recorded activation patterns into certified
Lipschitz bounds for unvisited linear regions, and renders region
atlases of 2-d slices.
"""

from .network import (
    ActivationPattern,
    GradientReport,
    Network,
    ShapeError,
    epsilon,
    forward,
    forward_many,
    grad_input,
    grad_params,
    input_gradients,
    load_network,
    local_linear_row,
    loss_value,
    network_from_dict,
    network_to_dict,
    random_network,
    save_network,
    sigmoid,
    sigmoid_slope,
    singular_extremes,
)
from .errors import RefusalError
from .lipschitz import (
    ComplexityReport,
    Corollary2Report,
    Corollary3Report,
    FirstLayerReport,
    TrajectoryWindow,
    audit_corollary2,
    audit_corollary3,
    audit_theorem1,
    complexity_report,
    corollary1_bound,
    covering_radius,
    distance_to_init_series,
    first_layer_bound,
    lambda_series,
    lambda_stats,
    local_lipschitz,
    prod_bound,
    steady_beta,
    steady_phi,
    sum_phi_per_epoch,
    write_summary,
)
from .region_algebra import (
    BPSolution,
    GammaEstimate,
    GeneralizationCertificate,
    PatternMatrix,
    ProbeAudit,
    Theorem2Report,
    audit_theorem2,
    basis_pursuit,
    bias_gradient_norms,
    binary_cover_bound,
    build_certificate,
    empirical_errors,
    estimate_gamma,
    generalization_bound,
    greedy_cover,
    lambda_steady,
    pattern_domination_check,
    patterns_of,
    radius,
    xi_factor,
)
from .regionviz import (
    ConvergenceReport,
    RegionCell,
    SlicePlane,
    convergence_check,
    emit_svg,
    scan_regions,
    write_regions_csv,
)
from .tasks import (
    Dataset,
    gen_corrupted_blobs,
    gen_sinusoid,
    latent_points,
    load_dataset,
    random_isometry,
    save_dataset,
    sinusoid_labels,
)
from .training import (
    DivergenceError,
    IterationRecord,
    NeuronFrequencies,
    RunLog,
    TrainConfig,
    load_run_log,
    neuron_frequencies,
    replay_networks,
    run_training,
    save_run_log,
    sgd_step,
)

__version__ = "0.1.0"
