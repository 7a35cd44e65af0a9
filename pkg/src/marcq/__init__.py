"""Mean response time of multiserver-job FCFS queues via relative completions."""
from .workload import (
    JobClass,
    JobState,
    PhaseType,
    SpecError,
    WorkloadSpec,
    exponential_class,
    load_spec,
    save_spec,
)
from .chains import (
    LabeledCTMC,
    build_chain,
    build_saturated_chain,
    build_sss_chain,
    canonical_encoding,
    in_service_prefix,
)
from .marc import MarcSolution, PredictionCurve, generator_residual, predict, solve

__version__ = "0.1.0"
