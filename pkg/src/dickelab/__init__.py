"""Numerical laboratory for the dissipative multi-mode Dicke laser model.

Integrates the classical macroscopic flow and classifies its phases,
solves the field-piloted single-site Bloch dynamics, audits the
constrained maximum-entropy property of the asymptotic product states,
and validates the macroscopic limit against exact finite-size Lindblad
evolution.
"""

__version__ = "0.1.0"

from .core import (
    MacroState,
    ModelParams,
    field_at_site,
    pack_state,
    unpack_state,
    validate_params,
)
from .macroflow import (
    HopfCrossing,
    LimitCycle,
    PhasePortrait,
    Trajectory,
    classify_phase,
    extract_limit_cycle,
    find_eta1,
    integrate_flow,
    jacobian_at,
    lyapunov_spectrum,
    macro_rhs,
    normal_fixed_point,
    scan_eta,
)
from .microdyn import (
    BlochAffine,
    BlochVector,
    PilotField,
    asymptotic_theta,
    bloch_generator,
    closed_form_state,
    evolve_site,
    propagate_affine,
    theta_fourier,
)
from .entropy import (
    AuditReport,
    BlockState,
    PeriodicProductState,
    SingleSiteState,
    bloch_density_matrix,
    entropy_density,
    max_entropy_audit,
    von_neumann_entropy,
)
from .oracle import (
    ConvergenceReport,
    OracleState,
    OracleSystem,
    assemble_atom_dissipator,
    assemble_system,
    build_initial_state,
    connected_correlator,
    convergence_report,
    evolve_master,
    macro_expectations,
)
from .config import RunConfig, parse_config
