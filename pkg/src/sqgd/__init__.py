"""Adaptive statistical queries, first-order oracles and gradient-descent simulations on finite domains."""

__version__ = "0.1.0"

from .attacks import (  # noqa: E402
    ComposedAnalyst,
    LADReconstructor,
    PadAttack,
    ReconstructionInstance,
    compose_analyst,
    make_reconstruction_instance,
    pad_attack,
    reconstruct,
)
from .convex import (  # noqa: E402
    BiasFunction,
    EmpiricalMeanFOOracle,
    FirstOrderInfo,
    FOOracle,
    GradientAccess,
    NoisyFOOracle,
    ProjectedGD,
    QuadraticQueryFunction,
    QuadraticTestbed,
    SQFromFOReduction,
    StochasticConvexFunction,
    TruthfulFOOracle,
    bias_demo,
    eval_fo_accuracy,
    eval_fo_posthoc,
    gd_rate_experiment,
    gd_step,
    project_unit_ball,
    quadratic_encode,
    run_gd,
    sq_from_fo_reduction,
)
from .gdsim import (  # noqa: E402
    BooleanAnalystTree,
    GDSimulator,
    HidingEmbedding,
    SimFunction,
    SimParams,
    apply_hiding,
    build_sim_function,
    check_sim_accuracy,
    eval_sim,
    kappa,
    rho,
    run_simulation,
    sq_oracle_from_foa,
)
from .sq import (  # noqa: E402
    Analyst,
    EmpiricalMeanOracle,
    FiniteDistribution,
    FiniteDomain,
    GaussianNoiseOracle,
    Sample,
    SampleSplittingOracle,
    SQOracle,
    Transcript,
    TruthfulOracle,
    boolean_wrap,
    empirical_value,
    eval_accuracy,
    eval_batch_accuracy,
    eval_posthoc,
    population_value,
    run_interaction,
)
