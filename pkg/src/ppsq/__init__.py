"""PPS gradient quantization with accelerated primal-dual and decentralised
stochastic gradient methods, exact bit accounting, and a CLI simulator."""

from .quantize import (
    CompressorStats,
    QuantizedGradient,
    categorical_sample,
    estimate_second_moment,
    from_bytes,
    identity_compressor,
    index_bits,
    message_bits,
    pps_compressor,
    pps_decode,
    pps_encode,
    pps_sigma2,
    pps_simplified_encode,
    randomM_encode,
    random_m_compressor,
    split_signs,
    to_bytes,
    topM_encode,
    top_m_compressor,
)
from .oracles import GradientOracle, minibatch, quantized_call
from .schedules import (
    Schedule,
    TheoryConstants,
    choice1_horizon,
    coeff_identities,
    default_alpha,
    default_beta,
    epsilon_bound,
    epsilon_bound_sweep,
    m_from_r,
    r_from_m,
    theory_constants,
    validate,
    variable_M,
    variable_r,
)
from .problems import (
    GaussianMeasure,
    GaussianMixtureMeasure,
    LogSumExp,
    NoisyNode,
    QuadraticLocal,
    SemiDiscreteWBNode,
    default_gamma,
    gaussian_wb_instance,
    grid_support,
    image_measure,
    quadratic_kkt_solution,
    random_row_stochastic,
    wb_restore_barycentre,
)
from .solvers import (
    AffineProblem,
    ScheduleError,
    dual_oracle,
    dual_value,
    feasibility_gap,
    primal_dual_solve,
    primal_solve,
    quadratic_affine_problem,
    restore_primal,
)
from .network import (
    LaplacianSpectrum,
    Topology,
    bits_report,
    consensus_gap,
    decentralized_solve,
    dual_gradient_identity_check,
    laplacian,
)
from .trace import RunTrace

__version__ = "0.1.0"
