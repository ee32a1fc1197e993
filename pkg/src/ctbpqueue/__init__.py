"""Exact transient queue-length laws for a finite arriving population.

``K`` customers arrive at i.i.d. times from a piecewise-constant density and
are served FCFS by ``c`` exponential servers.  The queue-length distribution
at any time is computed exactly (up to a certified truncation budget) by
propagating an auxiliary Poisson-arrival model over a triangular count space
and reweighting it back to the fixed-population law.
"""

from .arrival import (
    ModelSpec,
    PiecewisePdf,
    cdf_segment,
    ctbp_conditional_joint_pmf,
    ctbp_count_pmf,
    cumulative_intensity,
    nhpp_conditional_joint_pmf,
    sample_arrival_times,
)
from .distribution import QueueLengthDistribution, mass_defect, mix_to_queue_length, summarize
from .engine import (
    IntervalOperator,
    TriangularVector,
    propagate_interval,
    run_horizon,
    uniformized_step,
)
from .errors import ConfigurationError, NumericalGuardError
from .poisson import (
    TruncationPlan,
    build_truncation_plan,
    find_truncation_point,
    poisson_pmf,
    poisson_ratio_weight,
    poisson_upper_quantile,
)
from .presets import REFERENCE_T_GRID, reference_pdf, reference_spec
from .simulate import (
    EmpiricalDistribution,
    SamplePath,
    mtmc_transient,
    sample_nhpp_arrival_times,
    simulate_ctbp,
    simulate_nhpp,
    tv_distance,
)

__version__ = "0.1.0"

__all__ = [
    "ModelSpec",
    "PiecewisePdf",
    "cdf_segment",
    "cumulative_intensity",
    "ctbp_count_pmf",
    "ctbp_conditional_joint_pmf",
    "nhpp_conditional_joint_pmf",
    "sample_arrival_times",
    "TruncationPlan",
    "poisson_pmf",
    "poisson_upper_quantile",
    "poisson_ratio_weight",
    "find_truncation_point",
    "build_truncation_plan",
    "TriangularVector",
    "IntervalOperator",
    "uniformized_step",
    "propagate_interval",
    "run_horizon",
    "QueueLengthDistribution",
    "mix_to_queue_length",
    "mass_defect",
    "summarize",
    "SamplePath",
    "EmpiricalDistribution",
    "sample_nhpp_arrival_times",
    "simulate_ctbp",
    "simulate_nhpp",
    "mtmc_transient",
    "tv_distance",
    "reference_pdf",
    "reference_spec",
    "REFERENCE_T_GRID",
    "ConfigurationError",
    "NumericalGuardError",
    "__version__",
]
