"""Finite-difference wave propagation with wavefront temporal blocking made
legal by precomputing the on-grid effect of sparse off-the-grid sources and
receivers, plus a benchmark/verification harness."""

from .engine import (
    CompareReport,
    RunConfig,
    RunReport,
    RunResult,
    ScheduleSpec,
    SourceSpec,
    compare_runs,
    load_snapshot,
    run,
    save_snapshot,
)
from .errors import (
    ConfigError,
    InvalidPlanError,
    OutOfDomainError,
    RegionError,
    StabilityError,
)
from .grid import (
    FdCoefficients,
    GridSpec,
    TimeBufferedField,
    allocate_field,
    cfl_dt,
    fd_weights,
    staggered_fd_weights,
)
from .physics import (
    AcousticModel,
    ElasticModel,
    Wavelet,
    acoustic_update,
    build_damping,
    elastic_update_tau,
    elastic_update_v,
    ricker,
)
from .precompute import (
    DecomposedSource,
    ReceiverSupport,
    SparseSupport,
    build_masks,
    compress,
    decompose_wavefields,
    find_support,
    fused_inject_row,
    gather_box,
    precompute_receivers,
    scatter_all,
    scatter_box,
)
from .schedule import (
    Cmd,
    Dep,
    DependenceSpec,
    SpacePlan,
    Violation,
    WavefrontPlan,
    acoustic_deps,
    describe_plan,
    elastic_deps,
    enumerate_updates,
    make_wavefront_plan,
    naive_plan,
    space_plan,
    validate_schedule,
)
from .sparse import (
    InterpStencil,
    ReceiverSet,
    SourceSet,
    inject_direct,
    interp_stencil,
    record_receivers,
    source_scales,
)

__version__ = "0.1.0"
