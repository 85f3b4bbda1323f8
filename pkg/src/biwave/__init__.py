"""Density fields built from a forward-evolved initial and a backward-evolved final wavefunction."""

from .conservation import (
    ResidualReport,
    amplitude_trace,
    convergence_rate,
    field_equation_residuals,
    lagrangian_density,
    noether_checks,
)
from .config import ScenarioConfig, default_config, load_config
from .densities import (
    DensityField,
    EigenReport,
    ObservableSpec,
    amplitude,
    density,
    eigen_consistency_check,
    face_current,
    total,
)
from .errors import (
    AmplitudeNearZero,
    BiwaveError,
    ConfigError,
    GridMismatch,
    MissingSnapshots,
    NonPeriodicGrid,
    NotAnEigenvector,
    SingularSolve,
    SymmetryModeMismatch,
    TimeMismatch,
    TimeOrderViolation,
    UnreachableTime,
    UnresolvedWidth,
)
from .evolution import PotentialSpec, Segment, build_step, evolve_interval, parse_potential
from .fields import (
    ManyBodyField,
    SpatialGrid,
    TwoParticleField,
    WaveField,
    apply_mask,
    inner_product,
    make_gaussian,
    make_narrow_peak,
    make_plane_wave,
    random_field,
    slit_mask,
)
from .multibody import (
    TwoParticleDensityInput,
    antisymmetrize,
    density_identical,
    density_particle,
    density_total_distinguishable,
    evolve_many_body,
    load_many_body,
    product_state,
    save_many_body,
)
from .propagators import (
    PropagatorMatrix,
    advanced,
    appendix_amplitude,
    appendix_density,
    broken_line_density,
    export_propagator,
    retarded,
    substitution_check,
)
from .report import Assertion, ScenarioReport
from .scenarios import (
    rederive,
    run_double_slit,
    run_momentum_consistency,
    run_scenario,
    run_slit,
    run_stern_gerlach,
    run_triple_measurement,
    run_two_position,
)

__version__ = "0.1.0"
