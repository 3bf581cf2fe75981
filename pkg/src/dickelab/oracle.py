"""Exact finite-size Lindblad evolution used to validate the macro flow.

A chain of 2N+1 two-level atoms couples to n Fock-truncated modes.  The
Hamiltonian carries the mode energies, the atomic splitting and the dipole
interaction with prefactor (2N+1)^{-1/2}; dissipation enters through three
channels per atom (decay, pumping, dephasing with rates fixed by gamma1,
gamma2, eta) and one photon-loss channel per mode at rate 2 kappa_l.  The
atomic channel rates are chosen so that the Heisenberg action on sigma_-,
sigma_z reproduces the single-atom damping coefficients exactly; this
reproduction runs as a built-in self-check at assembly time.

Intensive averages of sigma_-, sigma_z and the scaled mode amplitudes are
the finite-size counterparts of the macroscopic (alpha, s, p); their
convergence towards the classical flow is what :func:`convergence_report`
measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sparse
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .core import MacroState, ModelParams, validate_params
from .entropy import SIGMA_X, SIGMA_Y, SIGMA_Z, bloch_density_matrix
from .errors import (
    CutoffError,
    DickeLabError,
    DimensionError,
    IntegrationError,
    NotPositiveError,
    ParameterError,
    SameSiteError,
    TruncationLeakError,
)
from .macroflow import integrate_flow
from .microdyn import BlochVector

SIGMA_M = np.array([[0, 0], [1, 0]], dtype=complex)  # excited -> ground
SIGMA_P = np.array([[0, 1], [0, 0]], dtype=complex)

_PAULI = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z, "-": SIGMA_M, "+": SIGMA_P}

DEFAULT_DIM_CAP = 4096
EXPM_MAX_DIM = 32
TOP_LEVEL_LEAK_TOL = 1e-4


def heisenberg_action(H: np.ndarray, jumps: Sequence, B: np.ndarray) -> np.ndarray:
    """Adjoint generator i[H, B] + sum rate (L' B L - {L'L, B}/2), L' = L†."""
    out = 1j * (H @ B - B @ H)
    for L, rate in jumps:
        Ld = L.conj().T
        LdL = Ld @ L
        out = out + rate * (Ld @ B @ L - 0.5 * (LdL @ B + B @ LdL))
    return out


def atom_rates(params: ModelParams) -> tuple:
    """(decay, pump, dephasing) channel rates of one atom."""
    down = params.gamma2 * (1 - params.eta) / 2
    up = params.gamma2 * (1 + params.eta) / 2
    deph = (2 * params.gamma1 - params.gamma2) / 4
    return down, up, deph


def assemble_atom_dissipator(params: ModelParams):
    """Jump list [(sigma_-, decay), (sigma_+, pump), (sigma_z, dephasing)].

    The decomposition is verified on the spot: together with the atomic
    Hamiltonian (epsilon/2) sigma_z, its Heisenberg action must send
    sigma_+- to -(gamma1 -+ i epsilon) sigma_+- and sigma_z to
    -gamma2 (sigma_z - eta I), coefficient by coefficient.
    """
    validate_params(params)
    down, up, deph = atom_rates(params)
    if deph < -1e-15:
        raise ParameterError(f"dephasing rate {deph:g} negative; rates inconsistent")
    deph = max(deph, 0.0)
    jumps = [(SIGMA_M, down), (SIGMA_P, up), (SIGMA_Z, deph)]

    H = 0.5 * params.epsilon * SIGMA_Z
    g1, g2, eps, eta = params.gamma1, params.gamma2, params.epsilon, params.eta
    checks = [
        (SIGMA_M, -(g1 + 1j * eps) * SIGMA_M),
        (SIGMA_P, -(g1 - 1j * eps) * SIGMA_P),
        (SIGMA_Z, -g2 * (SIGMA_Z - eta * np.eye(2))),
    ]
    for op, want in checks:
        got = heisenberg_action(H, jumps, op)
        if np.abs(got - want).max() > 1e-12:
            raise DickeLabError(
                "atom dissipator self-check failed: adjoint action deviates by "
                f"{np.abs(got - want).max():g}")
    return jumps


def destroy(cutoff: int) -> np.ndarray:
    """Truncated annihilation operator on a cutoff-level Fock space."""
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1).astype(complex)


def _embed(op: np.ndarray, pos: int, dims: Sequence[int]) -> sparse.csr_matrix:
    left = int(np.prod(dims[:pos], dtype=np.int64)) if pos else 1
    right = int(np.prod(dims[pos + 1:], dtype=np.int64)) if pos + 1 < len(dims) else 1
    out = sparse.csr_matrix(op)
    if left > 1:
        out = sparse.kron(sparse.identity(left, format="csr"), out, format="csr")
    if right > 1:
        out = sparse.kron(out, sparse.identity(right, format="csr"), format="csr")
    return out


@dataclass
class OracleSystem:
    """Finite-size model: Hamiltonian, jump channels and factor layout."""

    N: int
    cutoffs: tuple
    params: ModelParams
    hamiltonian: sparse.csr_matrix
    jump_ops: list  # [(csr operator, rate)]
    dims: tuple
    _op_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_atoms(self) -> int:
        return 2 * self.N + 1

    @property
    def site_labels(self) -> list:
        return list(range(-self.N, self.N + 1))

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def sigma_op(self, r: int, u: str) -> sparse.csr_matrix:
        """sigma_{r,u} embedded in the full space; r is a site label."""
        key = ("sigma", r, u)
        if key not in self._op_cache:
            pos = self.site_labels.index(r)
            self._op_cache[key] = _embed(_PAULI[u], pos, self.dims)
        return self._op_cache[key]

    def mode_op(self, l: int, kind: str) -> sparse.csr_matrix:
        """Mode-l operator: kind in {"a", "ad", "n", "top"}."""
        key = ("mode", l, kind)
        if key not in self._op_cache:
            a = destroy(self.cutoffs[l])
            mats = {"a": a, "ad": a.conj().T, "n": a.conj().T @ a}
            top = np.zeros_like(a)
            top[-1, -1] = 1.0
            mats["top"] = top
            self._op_cache[key] = _embed(mats[kind], self.n_atoms + l, self.dims)
        return self._op_cache[key]


@dataclass(frozen=True)
class OracleState:
    """Density matrix at a given evolution time."""

    rho: np.ndarray
    time: float

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        object.__setattr__(self, "rho", rho)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise DimensionError(f"rho must be square, got shape {rho.shape}")


def assemble_system(N: int, cutoffs, params: ModelParams,
                    cap: int = DEFAULT_DIM_CAP) -> OracleSystem:
    """Build Hamiltonian and jump list for 2N+1 atoms and n truncated modes.

    Self-checks at assembly: Hamiltonian Hermiticity to 1e-12, the atomic
    dissipator reproduction, and the free mode drift d<a>/dt =
    -(i omega + kappa) <a> on the single-mode factor space.
    """
    validate_params(params)
    if N < 0:
        raise ParameterError(f"N must be >= 0, got {N}")
    n = params.n
    if np.isscalar(cutoffs):
        cutoffs = (int(cutoffs),) * n
    cutoffs = tuple(int(c) for c in cutoffs)
    if len(cutoffs) != n:
        raise DimensionError(f"need {n} cutoffs, got {len(cutoffs)}")
    if any(c < 2 for c in cutoffs):
        raise ParameterError("every cutoff must be >= 2")
    n_atoms = 2 * N + 1
    dims = (2,) * n_atoms + cutoffs
    dim = int(np.prod(dims, dtype=np.int64))
    if dim > cap:
        raise DimensionError(f"dimension {dim} exceeds cap {cap}")

    system = OracleSystem(N=N, cutoffs=cutoffs, params=params,
                          hamiltonian=None, jump_ops=[], dims=dims)

    H = sparse.csr_matrix((dim, dim), dtype=complex)
    for l in range(n):
        H = H + params.omega[l] * system.mode_op(l, "n")
        a_small = destroy(cutoffs[l])
        free = heisenberg_action(params.omega[l] * (a_small.conj().T @ a_small),
                                 [(a_small, 2 * params.kappa[l])], a_small)
        want = -(1j * params.omega[l] + params.kappa[l]) * a_small
        if np.abs(free - want).max() > 1e-12:
            raise DickeLabError("mode drift self-check failed")
    scale = (2 * N + 1) ** (-0.5)
    for r in system.site_labels:
        H = H + 0.5 * params.epsilon * system.sigma_op(r, "z")
        for l in range(n):
            phase = np.exp(-2j * np.pi * l * r / n)
            X = (system.sigma_op(r, "-") @ system.mode_op(l, "ad")) * phase
            H = H + 1j * params.lam[l] * scale * (X - X.conj().T)
    herm_dev = abs(H - H.conj().T)
    if herm_dev.nnz and herm_dev.max() > 1e-12:
        raise DickeLabError(f"Hamiltonian not Hermitian: deviation {herm_dev.max():g}")

    assemble_atom_dissipator(params)  # runs the single-atom self-check
    down, up, deph = atom_rates(params)
    jump_ops = []
    for r in system.site_labels:
        for u, rate in (("-", down), ("+", up), ("z", deph)):
            if rate > 0:
                jump_ops.append((system.sigma_op(r, u), rate))
    for l in range(n):
        jump_ops.append((system.mode_op(l, "a"), 2 * params.kappa[l]))

    system.hamiltonian = H.tocsr()
    system.jump_ops = jump_ops
    return system


def coherent_vector(beta: complex, cutoff: int) -> np.ndarray:
    """Truncated, renormalized coherent state |beta> in a cutoff-level space."""
    v = np.empty(cutoff, dtype=complex)
    v[0] = 1.0
    for k in range(1, cutoff):
        v[k] = v[k - 1] * beta / math.sqrt(k)
    v /= np.linalg.norm(v)
    return v


def build_initial_state(system: OracleSystem, atom_theta: BlochVector,
                        alpha: np.ndarray) -> OracleState:
    """Uniform product state: every atom in the given Bloch state, every mode
    in a coherent state of amplitude alpha_l sqrt(2N+1).

    The expected photon number must stay below cutoff/3 per mode
    (CutoffError otherwise) so the truncated tail is negligible.
    """
    params = system.params
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.shape != (params.n,):
        raise DimensionError(f"alpha must have length n={params.n}")
    scale = math.sqrt(2 * system.N + 1)
    rho_atom = bloch_density_matrix(atom_theta).rho
    rho = np.array([[1.0 + 0j]])
    for _ in range(system.n_atoms):
        rho = np.kron(rho, rho_atom)
    for l in range(params.n):
        beta = alpha[l] * scale
        if abs(beta) ** 2 > system.cutoffs[l] / 3.0:
            raise CutoffError(
                f"mode {l}: expected photon number {abs(beta) ** 2:.3g} exceeds "
                f"cutoff/3 = {system.cutoffs[l] / 3.0:.3g}")
        v = coherent_vector(beta, system.cutoffs[l])
        rho = np.kron(rho, np.outer(v, v.conj()))
    return OracleState(rho=rho, time=0.0)


def _make_rhs(system: OracleSystem):
    # jump operators have O(dim) nonzeros; everything stays sparse and each
    # product costs O(dim^2) instead of a dense dim^3 matmul
    dim = system.dim
    H = system.hamiltonian.tocsr()
    Ht = H.T.tocsr()
    channels = []
    for L, rate in system.jump_ops:
        Ld = L.conj().T.tocsr()
        LdL = (Ld @ L).tocsr()
        channels.append((L.tocsr(), Ld.T.tocsr(), LdL, LdL.T.tocsr(), rate))

    def rhs(t, y):
        rho = y.reshape(dim, dim)
        rho_t = rho.T
        out = -1j * (H @ rho - (Ht @ rho_t).T)
        for L, Ldt, LdL, LdLt, rate in channels:
            Lr = L @ rho
            out += rate * ((Ldt @ Lr.T).T - 0.5 * (LdL @ rho + (LdLt @ rho_t).T))
        return out.ravel()

    return rhs


def _superoperator(system: OracleSystem) -> np.ndarray:
    """Dense generator acting on row-major vectorized density matrices."""
    dim = system.dim
    H = system.hamiltonian.toarray()
    eye = np.eye(dim)
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for op, rate in system.jump_ops:
        opd = op.toarray()
        Ld = opd.conj().T
        LdL = Ld @ opd
        L += rate * (np.kron(opd, opd.conj())
                     - 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T)))
    return L


def _check_state(system: OracleSystem, rho: np.ndarray, t: float) -> OracleState:
    tr = np.trace(rho)
    if abs(tr - 1.0) > 1e-9:
        raise IntegrationError(f"trace drifted to {tr:g} (|tr-1| > 1e-9)")
    rho = 0.5 * (rho + rho.conj().T)
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e-8:
        raise NotPositiveError(
            f"density matrix eigenvalue {evals.min():g} < -1e-8; "
            "likely Fock truncation too tight for this trajectory")
    for l in range(system.params.n):
        leak = _expect(system.mode_op(l, "top"), rho).real
        if leak > TOP_LEVEL_LEAK_TOL:
            raise TruncationLeakError(
                f"mode {l}: top Fock level population {leak:.3g} > {TOP_LEVEL_LEAK_TOL}")
    return OracleState(rho=rho, time=t)


def evolve_master(system: OracleSystem, state: OracleState, t_end: float,
                  tol: float = 1e-8, method: str = "auto") -> OracleState:
    """Evolve the density matrix to absolute time t_end.

    d rho/dt = -i[H, rho] + sum_k rate_k (L rho L' - {L'L, rho}/2).  Small
    systems (dim <= 32) use the dense exponential propagator; larger ones
    adaptive RK on the vectorized matrix.  Trace, Hermiticity, positivity
    and top-Fock-level occupation are checked on the result.
    """
    dt = t_end - state.time
    if dt < 0:
        raise ParameterError(f"t_end {t_end} precedes state time {state.time}")
    if dt == 0:
        return state
    if method == "auto":
        method = "expm" if system.dim <= EXPM_MAX_DIM else "rk"
    if method == "expm":
        prop = expm(_superoperator(system) * dt)
        rho = (prop @ state.rho.ravel()).reshape(system.dim, system.dim)
    elif method == "rk":
        sol = solve_ivp(_make_rhs(system), (0.0, dt), state.rho.ravel(),
                        method="RK45", rtol=tol, atol=tol * 1e-3)
        if not sol.success:
            raise IntegrationError(f"master equation integration failed: {sol.message}")
        rho = sol.y[:, -1].reshape(system.dim, system.dim)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return _check_state(system, rho, t_end)


def evolve_series(system: OracleSystem, state: OracleState, t_grid,
                  tol: float = 1e-8, method: str = "auto"):
    """States at every grid time (the grid must start at/after state.time)."""
    out = []
    current = state
    for t in np.asarray(t_grid, dtype=float):
        current = evolve_master(system, current, float(t), tol=tol, method=method)
        out.append(current)
    return out


def _expect(op: sparse.csr_matrix, rho: np.ndarray) -> complex:
    return complex(op.multiply(rho.T).sum())


def macro_expectations(system: OracleSystem, state: OracleState) -> dict:
    """Intensive averages: s_l, p_l, scaled alpha_l and photon numbers."""
    params = system.params
    n = params.n
    M = system.n_atoms
    rho = state.rho
    s = np.zeros(n, complex)
    p = np.zeros(n, complex)
    sm = {r: _expect(system.sigma_op(r, "-"), rho) for r in system.site_labels}
    sz = {r: _expect(system.sigma_op(r, "z"), rho) for r in system.site_labels}
    for l in range(n):
        for r in system.site_labels:
            ph = np.exp(-2j * np.pi * l * r / n)
            s[l] += sm[r] * ph
            p[l] += sz[r] * ph
    s /= M
    p /= M
    alpha = np.array([_expect(system.mode_op(l, "a"), rho) for l in range(n)])
    alpha /= math.sqrt(M)
    photons = np.array([_expect(system.mode_op(l, "n"), rho).real for l in range(n)])
    return {"s": s, "p": p, "alpha": alpha, "scaled_photons": photons / M}


def connected_correlator(system: OracleSystem, state: OracleState,
                         first: tuple, second: tuple) -> complex:
    """<sigma_{r,u} sigma_{r',v}> - <sigma_{r,u}> <sigma_{r',v}>, r != r'."""
    (r, u), (r2, v) = first, second
    if r == r2:
        raise SameSiteError(f"sites must differ, both are {r}")
    A = system.sigma_op(r, u)
    B = system.sigma_op(r2, v)
    rho = state.rho
    return _expect((A @ B).tocsr(), rho) - _expect(A, rho) * _expect(B, rho)


def default_cutoff(N: int, alpha: np.ndarray) -> int:
    """3x the largest expected photon number plus margin, coherent-tail safe."""
    peak = float(np.max(np.abs(np.asarray(alpha, dtype=complex)))) if len(alpha) else 0.0
    return int(math.ceil(3 * (2 * N + 1) * peak ** 2 + 10))


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    e_s: float
    e_p: float
    e_alpha: float
    max_scaled_photons: float


@dataclass(frozen=True)
class ConvergenceReport:
    t_grid: np.ndarray
    rows: tuple


def convergence_report(params: ModelParams, atom_theta: BlochVector,
                       alpha, N_list: Sequence[int], t_grid,
                       tol: float = 1e-8, cutoffs=None,
                       cap: int = DEFAULT_DIM_CAP) -> ConvergenceReport:
    """Distance between finite-size averages and the classical flow, per N.

    The matched classical start has s_0 = theta_-, p_0 = theta_z and the
    given mode amplitudes; errors are the max over the grid of the mode-0
    deviations.  Scaled photon numbers are reported for the boundedness
    check.
    """
    validate_params(params)
    alpha = np.asarray(alpha, dtype=complex)
    t_grid = np.asarray(t_grid, dtype=float)
    n = params.n
    s0 = np.zeros(n, complex)
    p0 = np.zeros(n, complex)
    s0[0] = atom_theta.minus
    p0[0] = atom_theta.z
    x0 = MacroState(alpha.copy(), s0, p0)
    traj = integrate_flow(x0, params, t_end=float(t_grid.max()) + 1e-9,
                          tol=min(tol, 1e-10), sample_dt=max(t_grid.max() / 100, 1e-3))
    macro_vals = [traj.state_at(t) for t in t_grid]

    rows = []
    for N in N_list:
        c = cutoffs if cutoffs is not None else default_cutoff(N, alpha)
        system = assemble_system(N, c, params, cap=cap)
        state = build_initial_state(system, atom_theta, alpha)
        states = evolve_series(system, state, t_grid, tol=tol)
        e_s = e_p = e_a = photons = 0.0
        for st, mac in zip(states, macro_vals):
            ex = macro_expectations(system, st)
            e_s = max(e_s, abs(ex["s"][0] - mac.s[0]))
            e_p = max(e_p, abs(ex["p"][0] - mac.p[0]))
            e_a = max(e_a, abs(ex["alpha"][0] - mac.alpha[0]))
            photons = max(photons, float(ex["scaled_photons"].max()))
        rows.append(ConvergenceRow(N=int(N), e_s=float(e_s), e_p=float(e_p),
                                   e_alpha=float(e_a), max_scaled_photons=photons))
    return ConvergenceReport(t_grid=t_grid, rows=tuple(rows))
