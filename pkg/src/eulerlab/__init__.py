"""eulerlab: a desk-scale 3D incompressible Euler laboratory.

Pseudo-spectral Euler evolution on a periodic box, Lagrangian probe
diagnostics of the vorticity transport identities, enstrophy-based blow-up
monitors with critical-time prediction, and reduced per-element ODE models
where finite-time singularities are realized and testable.
"""

from .dynamics import (
    FlowState,
    energy,
    enstrophy,
    helicity,
    init_flow,
    load_snapshot,
    pressure_and_hessian,
    save_snapshot,
    step,
    strain_field,
    vorticity_field,
)
from .eigenframe import AlignmentMetrics, EigenFrame, alignment, decompose, mu_max
from .errors import (
    CFLViolation,
    ConfigError,
    ConservationViolation,
    ContractViolation,
    EulerLabError,
    HypothesisViolation,
    NumericalFault,
    QuadratureBug,
)
from .functionals import (
    FunctionalSeries,
    MonitorVerdict,
    SampleFields,
    bound_curves,
    enstrophy_functionals,
    lemma20_check,
    theorem21_monitor,
    theorem22_monitor,
)
from .odemodel import (
    BlowupReport,
    FluidElement,
    element_ode_step,
    ensemble_predict,
    ensemble_sample_fields,
    load_ensemble,
    run_to_blowup,
    singular_point,
    vortex_tube_scenario,
)
from .probes import (
    IdentityReport,
    ProbeSet,
    ProbeTrajectory,
    advect,
    export_trajectories_csv,
    hull_volume,
    invariant_components,
    material_derivative_checks,
    seed_probes,
    simulate_with_probes,
)
from .spectral import (
    Grid,
    SpectralField,
    evaluate_at_points,
    solve_poisson,
    spectral_derivative,
    to_fourier,
    to_physical,
)

__version__ = "0.1.0"
