"""Classical macroscopic flow: integration, stability and phase structure.

The flow couples mode amplitudes alpha_l, polarizations s_l and inversions
p_l through the quadratic vector field

    d alpha_l/dt = -(i omega_l + kappa_l) alpha_l + lam_l s_l
    d s_l/dt     = -(i epsilon + gamma1) s_l + sum_m lam_m p_[l-m] alpha_m
    d p_l/dt     = -gamma2 (p_l - eta delta_l0)
                   - 2 sum_m lam_m (conj(alpha_m) s_[l+m] + alpha_m conj(s_[m-l]))

with mode indices wrapped mod n.  Below the pump threshold eta1 all
trajectories settle on the normal fixed point; at eta1 an oscillatory
instability creates a rotating single-mode orbit; beyond that the flow can
turn chaotic.  This module integrates the flow, locates eta1 by eigenvalue
bisection, measures Lyapunov spectra by tangent-space reorthonormalization,
and labels the phase of a trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .core import (
    MacroState,
    ModelParams,
    _p_layout,
    _p_layout_arrays,
    p_dof_matrix,
    pack_state,
    unpack_state,
    validate_params,
)
from .errors import (
    IntegrationError,
    MultiModeError,
    NoCrossingError,
    NotPeriodicError,
    ParameterError,
    RealCrossingError,
)


@lru_cache(maxsize=None)
def _mode_index_grids(n: int):
    idx = np.arange(n)
    lm = (idx[:, None] - idx[None, :]) % n
    lp = (idx[:, None] + idx[None, :]) % n
    ml = (idx[None, :] - idx[:, None]) % n
    drive_mask = idx == 0
    return lm, lp, ml, drive_mask


def _rhs_kernel(a, s, p, params: ModelParams):
    lam = params.lam
    lm, lp, ml, drive_mask = _mode_index_grids(params.n)
    q = lam * a
    da = -(1j * params.omega + params.kappa) * a + lam * s
    ds = -(1j * params.epsilon + params.gamma1) * s + (p[lm] * q[None, :]).sum(axis=1)
    drive = params.gamma2 * params.eta * drive_mask
    t1 = (np.conj(q)[None, :] * s[lp]).sum(axis=1)
    t2 = (q[None, :] * np.conj(s)[ml]).sum(axis=1)
    dp = -params.gamma2 * p + drive - 2.0 * (t1 + t2)
    return da, ds, dp


def macro_rhs(state: MacroState, params: ModelParams) -> MacroState:
    """Time derivative of a macroscopic phase point, as a MacroState.

    Preserves the conjugation symmetry of p exactly: the derivative of a
    symmetric p is symmetric (term by term in floating point).
    """
    da, ds, dp = _rhs_kernel(state.alpha, state.s, state.p, params)
    return MacroState(da, ds, dp)


def _packed_rhs(v: np.ndarray, params: ModelParams) -> np.ndarray:
    n = params.n
    a = v[0:2 * n:2] + 1j * v[1:2 * n:2]
    s = v[2 * n:4 * n:2] + 1j * v[2 * n + 1:4 * n:2]
    p = p_dof_matrix(n) @ v[4 * n:]
    da, ds, dp = _rhs_kernel(a, s, p, params)
    out = np.empty(5 * n)
    out[0:2 * n:2] = da.real
    out[1:2 * n:2] = da.imag
    out[2 * n:4 * n:2] = ds.real
    out[2 * n + 1:4 * n:2] = ds.imag
    l_idx, is_re = _p_layout_arrays(n)
    dpl = dp[l_idx]
    out[4 * n:] = np.where(is_re, dpl.real, dpl.imag)
    return out


def normal_fixed_point(params: ModelParams) -> MacroState:
    """Stationary point alpha = s = 0, p_l = eta delta_l0 (exact zero of the flow)."""
    n = params.n
    p = np.zeros(n, dtype=complex)
    p[0] = params.eta
    return MacroState(np.zeros(n, complex), np.zeros(n, complex), p)


def _cd_block(c: complex, d: complex) -> np.ndarray:
    """Real 2x2 block of dw -> c dw + d conj(dw) in (Re, Im) coordinates."""
    c, d = complex(c), complex(d)
    return np.array([
        [c.real + d.real, -c.imag + d.imag],
        [c.imag + d.imag, c.real - d.real],
    ])


def jacobian_at(state: MacroState, params: ModelParams) -> np.ndarray:
    """Exact Jacobian of the packed real vector field at the packed state.

    Assembled from the closed-form derivatives of the (quadratic) flow;
    every complex pair contributes a 2x2 real block, and the inversion
    columns go through the p-dof expansion matrix.
    """
    n = params.n
    if state.n != n:
        raise ParameterError(f"state has n={state.n}, params have n={n}")
    a, s = state.alpha, state.s
    p = state.p
    lam, om, ka = params.lam, params.omega, params.kappa
    eps, g1, g2 = params.epsilon, params.gamma1, params.gamma2
    C = p_dof_matrix(n)
    m5 = 5 * n
    J = np.zeros((m5, m5))
    A = lambda l: slice(2 * l, 2 * l + 2)
    S = lambda l: slice(2 * n + 2 * l, 2 * n + 2 * l + 2)
    u0 = 4 * n

    for l in range(n):
        J[A(l), A(l)] = _cd_block(-(1j * om[l] + ka[l]), 0)
        J[A(l), S(l)] = _cd_block(lam[l], 0)

    for l in range(n):
        J[S(l), S(l)] += _cd_block(-(1j * eps + g1), 0)
        w = np.zeros(n, dtype=complex)
        for m in range(n):
            J[S(l), A(m)] += _cd_block(lam[m] * p[(l - m) % n], 0)
            w += lam[m] * a[m] * C[(l - m) % n]
        J[2 * n + 2 * l, u0:] += w.real
        J[2 * n + 2 * l + 1, u0:] += w.imag

    for k, (l, part) in enumerate(_p_layout(n)):
        row = u0 + k
        pick = 0 if part == "re" else 1
        for m in range(n):
            blk = _cd_block(-2 * lam[m] * np.conj(s[(m - l) % n]),
                            -2 * lam[m] * s[(l + m) % n])
            J[row, A(m)] += blk[pick]
            blk = _cd_block(-2 * lam[(m - l) % n] * np.conj(a[(m - l) % n]),
                            -2 * lam[(m + l) % n] * a[(m + l) % n])
            J[row, S(m)] += blk[pick]
        wu = -g2 * C[l]
        J[row, u0:] += wu.real if part == "re" else wu.imag
    return J


class _AffineJacobian:
    """J(x) = J0 + sum_i x_i J1[i]; the flow is quadratic so this is exact."""

    def __init__(self, params: ModelParams):
        n = params.n
        m = 5 * n
        zero = unpack_state(np.zeros(m), n)
        self.J0 = jacobian_at(zero, params)
        self.J1 = np.empty((m, m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = 1.0
            self.J1[i] = jacobian_at(unpack_state(e, n), params) - self.J0

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.J0 + np.tensordot(v, self.J1, axes=1)


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of the macro flow with its dense interpolant."""

    times: np.ndarray
    ys: np.ndarray  # (len(times), 5n) packed samples
    params: ModelParams
    sol: object  # scipy OdeSolution over the full integration window

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size and (t[0] < 0 or np.any(np.diff(t) <= 0)):
            raise ParameterError("times must start at >= 0 and strictly increase")

    @cached_property
    def states(self) -> tuple:
        n = self.params.n
        return tuple(unpack_state(y, n) for y in self.ys)

    def packed_at(self, t: float) -> np.ndarray:
        if not (self.sol.t_min - 1e-12 <= t <= self.sol.t_max + 1e-12):
            raise ParameterError(
                f"t={t} outside integrated window [{self.sol.t_min}, {self.sol.t_max}]")
        return self.sol(t)

    def state_at(self, t: float) -> MacroState:
        return unpack_state(self.packed_at(t), self.params.n)

    def alpha_at(self, t: float) -> np.ndarray:
        v = self.packed_at(t)
        n = self.params.n
        return v[0:2 * n:2] + 1j * v[1:2 * n:2]

    def after(self, t_min: float) -> "Trajectory":
        """View keeping only samples with times >= t_min."""
        keep = self.times >= t_min - 1e-12
        return Trajectory(self.times[keep], self.ys[keep], self.params, self.sol)


def integrate_flow(x0: MacroState, params: ModelParams, t_end: float,
                   tol: float = 1e-8, sample_dt: float = 0.01,
                   t0: float = 0.0) -> Trajectory:
    """Adaptively integrate the flow from x0 over [t0, t_end].

    Dense output is sampled every sample_dt (plus the endpoint).  The
    integration runs on the packed 5n real coordinates, which enforces the
    conjugation symmetry of p identically at every step.  Raises
    IntegrationError if the stepper fails (e.g. step size underflow).
    """
    validate_params(params)
    if not 0 < tol <= 1e-3:
        raise ParameterError(f"tol must lie in (0, 1e-3], got {tol}")
    if not t_end > t0 >= 0:
        raise ParameterError(f"need t_end > t0 >= 0, got t0={t0}, t_end={t_end}")
    v0 = pack_state(x0)
    sol = solve_ivp(lambda t, v: _packed_rhs(v, params), (t0, t_end), v0,
                    method="RK45", rtol=tol, atol=tol * 1e-3, dense_output=True)
    if not sol.success:
        raise IntegrationError(f"integration failed: {sol.message}")
    nsteps = int(np.floor((t_end - t0) / sample_dt + 1e-9))
    times = t0 + sample_dt * np.arange(nsteps + 1)
    if times[-1] < t_end - 1e-9 * max(1.0, t_end):
        times = np.append(times, t_end)
    ys = sol.sol(times).T
    if not np.all(np.isfinite(ys)):
        raise IntegrationError("trajectory left the finite domain (NaN/inf samples)")
    return Trajectory(times, ys, params, sol.sol)


def lyapunov_spectrum(params: ModelParams, x0: MacroState, t_transient: float,
                      t_sample: float, tol: float = 1e-9, reorth_dt: float = 1.0,
                      n_exponents: Optional[int] = None) -> np.ndarray:
    """Lyapunov exponents by tangent-space evolution with periodic QR.

    The flow is integrated jointly with n_exponents orthonormal tangent
    vectors (default all 5n); the tangent frame is reorthonormalized every
    reorth_dt time units and the averaged log stretching rates over
    t_sample, after discarding t_transient, are returned in descending
    order.
    """
    validate_params(params)
    if t_transient <= 0 or t_sample <= 0:
        raise ParameterError("t_transient and t_sample must be > 0")
    n = params.n
    m = 5 * n
    k = m if n_exponents is None else int(n_exponents)
    if not 1 <= k <= m:
        raise ParameterError(f"n_exponents must be in [1, {m}]")
    jac = _AffineJacobian(params)

    def joint(t, y):
        v = y[:m]
        Q = y[m:].reshape(m, k)
        dv = _packed_rhs(v, params)
        dQ = jac(v) @ Q
        return np.concatenate([dv, dQ.ravel()])

    v = pack_state(x0)
    Q = np.eye(m)[:, :k]
    sums = np.zeros(k)

    def advance(v, Q, horizon, accumulate):
        nonlocal sums
        nseg = max(1, int(np.ceil(horizon / reorth_dt)))
        dt = horizon / nseg
        for _ in range(nseg):
            y0 = np.concatenate([v, Q.ravel()])
            seg = solve_ivp(joint, (0.0, dt), y0, method="RK45",
                            rtol=tol, atol=tol * 1e-3)
            if not seg.success:
                raise IntegrationError(f"tangent integration failed: {seg.message}")
            v = seg.y[:m, -1]
            W = seg.y[m:, -1].reshape(m, k)
            Q, R = np.linalg.qr(W)
            diag = np.diag(R)
            signs = np.sign(diag)
            signs[signs == 0] = 1.0
            Q = Q * signs
            if accumulate:
                sums += np.log(np.abs(diag))
        return v, Q

    v, Q = advance(v, Q, t_transient, accumulate=False)
    advance(v, Q, t_sample, accumulate=True)
    return np.sort(sums / t_sample)[::-1]


@dataclass(frozen=True)
class HopfCrossing:
    """Pump threshold where the fixed point loses stability oscillating."""

    eta1: float
    frequency: float  # |Im| of the crossing eigenvalue pair
    bracket: tuple


def find_eta1(params: ModelParams, bracket: tuple,
              width_tol: float = 1e-8) -> HopfCrossing:
    """Bisect the pump value where the fixed-point spectrum touches Re = 0.

    The stability indicator is the largest eigenvalue real part of the
    Jacobian at the normal fixed point.  Requires opposite signs at the
    bracket ends (NoCrossingError otherwise); the crossing pair must have
    nonzero imaginary part (RealCrossingError otherwise, reported rather
    than classified).
    """

    def spectrum(eta):
        pr = validate_params(replace(params, eta=eta))
        return np.linalg.eigvals(jacobian_at(normal_fixed_point(pr), pr))

    lo, hi = float(bracket[0]), float(bracket[1])
    glo = spectrum(lo).real.max()
    ghi = spectrum(hi).real.max()
    if glo == 0.0 or ghi == 0.0 or (glo > 0) == (ghi > 0):
        raise NoCrossingError(
            f"no sign change of the stability indicator on [{lo}, {hi}] "
            f"(values {glo:g}, {ghi:g})")
    while hi - lo > width_tol:
        mid = 0.5 * (lo + hi)
        gm = spectrum(mid).real.max()
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
    eta1 = 0.5 * (lo + hi)
    eigs = spectrum(eta1)
    crossing = eigs[np.argmax(eigs.real)]
    freq = abs(crossing.imag)
    if freq < 1e-8:
        raise RealCrossingError(
            f"crossing eigenvalue {crossing:g} is real; not an oscillatory instability")
    return HopfCrossing(eta1=eta1, frequency=freq, bracket=(lo, hi))


@dataclass(frozen=True)
class LimitCycle:
    """Rotating single-mode orbit: the active mode k turns uniformly at
    rate nu while |alpha_k|, |s_k| and p_0 stay constant."""

    nu: float
    mode: int
    alpha0: float
    s0: float
    p0: float
    phase_alpha: float  # alpha_k(t) = alpha0 exp(-i (nu t + phase_alpha))
    phase_s: float      # s_k(t) = s0 exp(-i (nu t + phase_s))


def _phase_fit(ts: np.ndarray, z: np.ndarray):
    """Fit unwrap(angle(z)) ~ -(nu t + phase); returns (nu, phase in (-pi, pi])."""
    ph = np.unwrap(np.angle(z))
    slope, intercept = np.polyfit(ts, ph, 1)
    nu = -slope
    phase = -intercept
    phase = np.angle(np.exp(1j * phase))
    return nu, phase


def extract_limit_cycle(traj: Trajectory, mag_tol: float = 1e-6,
                        fluct_tol: float = 1e-3) -> LimitCycle:
    """Detect the rotating-frame structure in a post-transient trajectory.

    Exactly one mode may stay active (|alpha_l| above mag_tol); its modulus
    and that of s must be constant to relative fluct_tol, p_0 constant and
    all other p components below mag_tol.  nu comes from the phase winding
    rate of the active alpha mode.
    """
    n = traj.params.n
    ts = traj.times
    if ts.size < 8:
        raise NotPeriodicError("too few samples to assess periodicity")
    ys = traj.ys
    alpha = ys[:, 0:2 * n:2] + 1j * ys[:, 1:2 * n:2]
    s = ys[:, 2 * n:4 * n:2] + 1j * ys[:, 2 * n + 1:4 * n:2]
    p = ys[:, 4 * n:] @ p_dof_matrix(n).T

    peaks = np.abs(alpha).max(axis=0)
    active = np.flatnonzero(peaks > mag_tol)
    if active.size == 0:
        raise NotPeriodicError(
            f"all mode amplitudes stay below {mag_tol:g}; no orbit to extract")
    if active.size > 1:
        raise MultiModeError(f"modes {active.tolist()} all stay active")
    k = int(active[0])

    aab = np.abs(alpha[:, k])
    sab = np.abs(s[:, k])
    for name, series in (("(|alpha|)", aab), ("(|s|)", sab)):
        mean = series.mean()
        if mean <= 0 or (series.max() - series.min()) / mean > fluct_tol:
            raise NotPeriodicError(
                f"relative fluctuation of {name} exceeds {fluct_tol:g}")
    others = [l for l in range(n) if l != k]
    if others and np.abs(s[:, others]).max() > mag_tol:
        raise NotPeriodicError("inactive polarization modes above tolerance")
    if n > 1 and np.abs(p[:, 1:]).max() > mag_tol:
        raise NotPeriodicError("nonzero-index inversion modes above tolerance")
    p0 = p[:, 0].real
    if (p0.max() - p0.min()) > fluct_tol * max(1.0, abs(p0.mean())):
        raise NotPeriodicError("p_0 is not constant along the tail")

    nu, phase_alpha = _phase_fit(ts, alpha[:, k])
    _, phase_s = _phase_fit(ts, s[:, k])
    return LimitCycle(nu=nu, mode=k, alpha0=float(aab.mean()), s0=float(sab.mean()),
                      p0=float(p0.mean()), phase_alpha=float(phase_alpha),
                      phase_s=float(phase_s))


@dataclass(frozen=True)
class PhasePortrait:
    """Phase label with its supporting evidence."""

    label: str  # normal | coherent | chaotic | undetermined
    lyapunov: np.ndarray  # descending; for "normal", the linearization spectrum
    limit_cycle: Optional[LimitCycle] = None
    fixed_point: Optional[MacroState] = None


def default_transient(params: ModelParams) -> float:
    """Several multiples of the slowest decay time of the model."""
    return 20.0 / min(params.gamma1, params.gamma2, float(params.kappa.min()))


def classify_phase(params: ModelParams, x0: MacroState,
                   t_transient: Optional[float] = None,
                   t_observe: Optional[float] = None,
                   tol: float = 1e-8, sample_dt: float = 0.05,
                   lyap_sample: float = 300.0,
                   zero_tol: Optional[float] = None,
                   n_exponents: int = 1,
                   slope_tol: float = 1e-4,
                   fp_radius: float = 5e-3) -> PhasePortrait:
    """Label the attractor reached from x0 as normal/coherent/chaotic.

    Evidence is gathered in order: convergence towards the normal fixed
    point (sustained log-slope decay of the distance AND proximity within
    fp_radius, or outright arrival), then limit-cycle extraction on the
    post-transient tail, then the sign of the largest Lyapunov exponent.
    Conflicting evidence yields "undetermined"; the function never guesses.
    """
    validate_params(params)
    if t_transient is None:
        t_transient = default_transient(params)
    if t_observe is None:
        t_observe = 2.0 * t_transient
    if zero_tol is None:
        zero_tol = 0.02 * params.gamma2

    traj = integrate_flow(x0, params, t_end=t_transient + t_observe,
                          tol=tol, sample_dt=sample_dt)
    fp = normal_fixed_point(params)
    vfp = pack_state(fp)
    tail = traj.after(t_transient)
    dist = np.linalg.norm(tail.ys - vfp[None, :], axis=1)
    q = max(1, dist.size // 10)
    d_end = dist[-q:].mean()
    slope = np.polyfit(tail.times, np.log(np.maximum(dist, 1e-300)), 1)[0]

    eigs = np.linalg.eigvals(jacobian_at(fp, params))
    stable = eigs.real.max() < 0
    converging = d_end < 1e-8 or (slope < -slope_tol and d_end < fp_radius)
    if converging:
        spectrum = np.sort(eigs.real)[::-1]
        if stable:
            return PhasePortrait("normal", spectrum, fixed_point=fp)
        return PhasePortrait("undetermined", spectrum, fixed_point=fp)

    # the trajectory end point is already on the attractor; the exponent
    # run only needs a short transient to align the tangent frame
    settled = unpack_state(traj.ys[-1], params.n)
    spectrum = lyapunov_spectrum(params, settled, min(20.0, t_transient),
                                 lyap_sample, tol=max(tol, 1e-10),
                                 n_exponents=n_exponents)
    lam1 = spectrum[0]
    try:
        cycle = extract_limit_cycle(tail)
    except (NotPeriodicError, MultiModeError):
        if lam1 > zero_tol:
            return PhasePortrait("chaotic", spectrum)
        return PhasePortrait("undetermined", spectrum)
    if abs(lam1) <= zero_tol:
        return PhasePortrait("coherent", spectrum, limit_cycle=cycle)
    return PhasePortrait("undetermined", spectrum, limit_cycle=cycle)


@dataclass(frozen=True)
class ScanPoint:
    eta: float
    label: str
    lyap_max: float
    nu: Optional[float]


def scan_eta(params: ModelParams, eta_grid: np.ndarray, perturb: float = 1e-3,
             **classify_kwargs):
    """Classify the phase over a pump grid; bisect eta1 where the label turns.

    Each grid point restarts from the normal fixed point kicked by
    ``perturb`` in Re alpha_0.  Returns (points, crossing-or-None).
    """
    points = []
    for eta in np.asarray(eta_grid, dtype=float):
        pr = validate_params(replace(params, eta=eta))
        x0 = normal_fixed_point(pr)
        alpha = x0.alpha.copy()
        alpha[0] += perturb
        portrait = classify_phase(pr, MacroState(alpha, x0.s, x0.p), **classify_kwargs)
        nu = portrait.limit_cycle.nu if portrait.limit_cycle else None
        points.append(ScanPoint(eta=float(eta), label=portrait.label,
                                lyap_max=float(portrait.lyapunov[0]), nu=nu))
    crossing = None
    for i in range(1, len(points)):
        if points[i - 1].label == "normal" and points[i].label != "normal":
            try:
                crossing = find_eta1(params, (points[i - 1].eta, points[i].eta))
            except (NoCrossingError, RealCrossingError):
                crossing = None
            break
    return points, crossing
