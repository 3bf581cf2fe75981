"""Single-site Bloch dynamics piloted by the classical macroscopic field.

Each site r sees the field phi_{r,t} synthesized from the mode amplitudes
of a macro trajectory.  Its Bloch vector theta = (theta_x, theta_y,
theta_z) obeys the affine equation d theta/dt = b_r(t) theta + c with
c = (0, 0, gamma2 * eta).  The symmetric part of b_r(t) is exactly
diag(-gamma1, -gamma1, -gamma2), so the homogeneous propagator contracts
at least as fast as exp(-min(gamma1, gamma2) dt): initial conditions are
transients, and after they die out the Bloch vector equals the Fourier
synthesis of the macroscopic s and p amplitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .core import MacroState, ModelParams, field_at_site, site_phases, validate_params
from .errors import HorizonError, IntegrationError, MissingCycleError, ParameterError
from .macroflow import LimitCycle, Trajectory

# gamma * t beyond which exp(-gamma t) < 1e-8: transients are negligible
ASYMPTOTIC_GAMMA_T = 18.4


@dataclass(frozen=True)
class BlochVector:
    """Spin expectation 3-vector with derived rotating-frame components."""

    theta: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.theta, dtype=float)
        if arr.shape != (3,):
            raise ParameterError(f"theta must have shape (3,), got {arr.shape}")
        object.__setattr__(self, "theta", arr)

    @property
    def x(self) -> float:
        return float(self.theta[0])

    @property
    def y(self) -> float:
        return float(self.theta[1])

    @property
    def z(self) -> float:
        return float(self.theta[2])

    @property
    def minus(self) -> complex:
        return 0.5 * (self.theta[0] - 1j * self.theta[1])

    @property
    def plus(self) -> complex:
        return 0.5 * (self.theta[0] + 1j * self.theta[1])

    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))

    @classmethod
    def from_components(cls, minus: complex, z: float) -> "BlochVector":
        return cls(np.array([2 * minus.real, -2 * minus.imag, float(z)]))


class PilotField:
    """Classical field phi_{r,t} built from mode amplitudes alpha(t).

    The site dependence is the Fourier synthesis of :func:`field_at_site`,
    so n-periodicity in r and consistency with the amplitudes hold by
    construction.  ``alpha_fn`` maps a time to the complex n-vector of
    amplitudes; trajectories supply their dense interpolant.
    """

    def __init__(self, n: int, lam: np.ndarray, alpha_fn: Callable[[float], np.ndarray]):
        self.n = int(n)
        self.lam = np.asarray(lam, dtype=float)
        self.alpha_fn = alpha_fn

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "PilotField":
        return cls(traj.params.n, traj.params.lam, traj.alpha_at)

    def __call__(self, r: int, t: float) -> complex:
        return field_at_site(r, self.alpha_fn(t), self.lam)


def bloch_generator(r: int, t: float, field: PilotField,
                    params: ModelParams) -> np.ndarray:
    """Real 3x3 generator b_r(t) of the homogeneous Bloch equation.

    Fixed by requiring that the (theta_-, theta_z) component equations of
    d theta/dt = b theta reproduce the piloted polarization/inversion pair:
    d theta_- = -(i eps + gamma1) theta_- + i phi theta_z and
    d theta_z = -gamma2 theta_z + 2i (conj(phi) theta_- - c.c.).
    """
    phi = complex(field(r, t))
    e, g1, g2 = params.epsilon, params.gamma1, params.gamma2
    return np.array([
        [-g1, -e, -2 * phi.imag],
        [e, -g1, -2 * phi.real],
        [2 * phi.imag, 2 * phi.real, -g2],
    ])


def _drive(params: ModelParams) -> np.ndarray:
    return np.array([0.0, 0.0, params.gamma2 * params.eta])


@dataclass(frozen=True)
class BlochAffine:
    """Propagator of the affine Bloch flow over (t0, t1) at one site:
    theta(t1) = green @ theta(t0) + drift."""

    green: np.ndarray
    drift: np.ndarray
    site: int
    t0: float
    t1: float

    def compose(self, earlier: "BlochAffine") -> "BlochAffine":
        """Propagator over (earlier.t0, self.t1); requires matching junction."""
        if self.site != earlier.site or abs(self.t0 - earlier.t1) > 1e-9:
            raise ParameterError("affine pieces do not join at a common time/site")
        return BlochAffine(self.green @ earlier.green,
                           self.green @ earlier.drift + self.drift,
                           self.site, earlier.t0, self.t1)


def propagate_affine(r: int, t0: float, t1: float, field: PilotField,
                     params: ModelParams, tol: float = 1e-10) -> BlochAffine:
    """Integrate the Green matrix and drift integral over [t0, t1] jointly.

    green solves dG/dt = b_r(t) G from the identity; drift accumulates the
    pump inhomogeneity int g(t1, u) (0, 0, gamma2 eta) du.
    """
    validate_params(params)
    if t1 < t0:
        raise ParameterError(f"need t1 >= t0, got {t0} > {t1}")
    c = _drive(params)
    if t1 == t0:
        return BlochAffine(np.eye(3), np.zeros(3), r, t0, t1)

    def rhs(t, y):
        b = bloch_generator(r, t, field, params)
        G = y[:9].reshape(3, 3)
        d = y[9:]
        return np.concatenate([(b @ G).ravel(), b @ d + c])

    y0 = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    sol = solve_ivp(rhs, (t0, t1), y0, method="RK45", rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise IntegrationError(f"Bloch propagation failed: {sol.message}")
    y = sol.y[:, -1]
    return BlochAffine(y[:9].reshape(3, 3), y[9:], r, t0, t1)


def evolve_site(theta0: BlochVector, affine: BlochAffine) -> BlochVector:
    """Apply the affine propagator: theta -> green @ theta + drift."""
    return BlochVector(affine.green @ theta0.theta + affine.drift)


def asymptotic_theta(r: int, t: float, macro_traj: Trajectory,
                     tol: float = 1e-10) -> BlochVector:
    """Transient-free Bloch vector at (r, t): the drift integral alone.

    Valid only deep enough into the trajectory that the Green function has
    contracted below 1e-8, i.e. gamma (t - t_start) > 18.4; HorizonError
    otherwise.
    """
    params = macro_traj.params
    t_start = float(macro_traj.sol.t_min)
    gamma = params.gamma_min
    if gamma * (t - t_start) < ASYMPTOTIC_GAMMA_T:
        raise HorizonError(
            f"gamma*(t - t0) = {gamma * (t - t_start):.3g} < {ASYMPTOTIC_GAMMA_T}; "
            "transients not yet negligible")
    field = PilotField.from_trajectory(macro_traj)
    c = _drive(params)

    def rhs(u, th):
        return bloch_generator(r, u, field, params) @ th + c

    sol = solve_ivp(rhs, (t_start, t), np.zeros(3), method="RK45",
                    rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise IntegrationError(f"Bloch integration failed: {sol.message}")
    return BlochVector(sol.y[:, -1])


def theta_fourier(r: int, t: float, macro_traj: Trajectory) -> BlochVector:
    """Bloch vector synthesized from the macro amplitudes at time t:
    theta_- = sum_l s_l e^{2 pi i r l / n}, theta_z likewise from p."""
    state = macro_traj.state_at(t)
    phases = site_phases(r, macro_traj.params.n)
    minus = complex(np.sum(state.s * phases))
    z = complex(np.sum(state.p * phases))
    if abs(z.imag) > 1e-10:
        raise ParameterError(
            f"theta_z not real (Im = {z.imag:g}); inversion symmetry broken")
    return BlochVector.from_components(minus, z.real)


def closed_form_state(phase: str, params: ModelParams,
                      cycle: Optional[LimitCycle] = None,
                      t: float = 0.0) -> list:
    """Explicit asymptotic product-state data, one BlochVector per site.

    "normal": every site carries (0, 0, eta), stationary.  "coherent":
    theta_- rotates as s0 exp(i(2 pi k r / n - nu t - phase_s)) while
    theta_z stays at the orbit's inversion; requires a limit-cycle record.
    """
    validate_params(params)
    n = params.n
    if phase == "normal":
        return [BlochVector(np.array([0.0, 0.0, params.eta])) for _ in range(n)]
    if phase == "coherent":
        if cycle is None:
            raise MissingCycleError("coherent family needs a limit_cycle record")
        out = []
        for r in range(n):
            minus = cycle.s0 * np.exp(
                1j * (2 * np.pi * ((cycle.mode * r) % n) / n
                      - cycle.nu * t - cycle.phase_s))
            out.append(BlochVector.from_components(complex(minus), cycle.p0))
        return out
    raise ParameterError(f"phase must be 'normal' or 'coherent', got {phase!r}")
