"""Site entropies and the constrained maximum-entropy audit.

A Bloch vector determines a 2x2 density matrix rho = (I + theta . sigma)/2
(basis convention: sigma_z = diag(1, -1), excited state first, so positive
pumping means a larger first diagonal entry).  The entropy density of an
n-periodic product state is the mean single-site von Neumann entropy; the
audit checks numerically that no block state sharing the product state's
single-site marginals can beat that density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import BlochNormError, NotPositiveError, ParameterError
from .microdyn import BlochVector

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

BLOCH_NORM_TOL = 1e-9
PSD_TOL = 1e-10
AUDIT_DIM_CAP = 4096


@dataclass(frozen=True)
class SingleSiteState:
    """2x2 density matrix together with the Bloch vector it encodes."""

    rho: np.ndarray
    bloch: BlochVector


@dataclass(frozen=True)
class BlockState:
    """Density matrix of a finite ordered set of sites."""

    sites: tuple
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "sites", tuple(self.sites))
        dim = 2 ** len(self.sites)
        if rho.shape != (dim, dim):
            raise ParameterError(
                f"rho must be {dim}x{dim} for {len(self.sites)} sites, got {rho.shape}")
        if abs(np.trace(rho) - 1.0) > 1e-9:
            raise NotPositiveError(f"trace {np.trace(rho):g} != 1")
        if np.abs(rho - rho.conj().T).max() > 1e-9:
            raise NotPositiveError("rho is not Hermitian")


@dataclass(frozen=True)
class PeriodicProductState:
    """One period of Bloch vectors of an n-periodic decorrelated state."""

    thetas: tuple

    def __post_init__(self):
        thetas = tuple(self.thetas)
        object.__setattr__(self, "thetas", thetas)
        if not thetas:
            raise ParameterError("need at least one site per period")
        for th in thetas:
            if th.norm() > 1.0 + BLOCH_NORM_TOL:
                raise BlochNormError(f"Bloch norm {th.norm():g} exceeds 1")

    @property
    def period(self) -> int:
        return len(self.thetas)


def bloch_density_matrix(theta: Union[BlochVector, Sequence[float]]) -> SingleSiteState:
    """Two-level density matrix (I + theta . sigma)/2 for a Bloch vector.

    Vectors with norm in (1, 1 + 1e-9] are clipped onto the unit sphere;
    larger norms are rejected since they encode no quantum state.
    """
    if not isinstance(theta, BlochVector):
        theta = BlochVector(np.asarray(theta, dtype=float))
    nrm = theta.norm()
    if nrm > 1.0 + BLOCH_NORM_TOL:
        raise BlochNormError(f"Bloch norm {nrm:g} exceeds 1 beyond tolerance")
    vec = theta.theta if nrm <= 1.0 else theta.theta / nrm
    rho = 0.5 * (np.eye(2, dtype=complex)
                 + vec[0] * SIGMA_X + vec[1] * SIGMA_Y + vec[2] * SIGMA_Z)
    return SingleSiteState(rho=rho, bloch=theta)


def von_neumann_entropy(block: Union[BlockState, SingleSiteState, np.ndarray],
                        k: float = 1.0) -> float:
    """-k Tr(rho ln rho) with the 0 ln 0 = 0 convention.

    Raises NotPositiveError if an eigenvalue is below -1e-10.
    """
    if isinstance(block, BlockState):
        rho = block.rho
    elif isinstance(block, SingleSiteState):
        rho = block.rho
    else:
        rho = np.asarray(block, dtype=complex)
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -PSD_TOL:
        raise NotPositiveError(f"eigenvalue {evals.min():g} below -{PSD_TOL:g}")
    evals = evals[evals > 0]
    return float(-k * np.sum(evals * np.log(evals)))


def product_block(state: PeriodicProductState, periods: int = 1) -> BlockState:
    """Tensor product of ``periods`` repetitions of the one-period marginals."""
    rho = np.array([[1.0 + 0j]])
    sites = []
    for m in range(periods):
        for r, th in enumerate(state.thetas):
            rho = np.kron(rho, bloch_density_matrix(th).rho)
            sites.append(m * state.period + r)
    return BlockState(sites=tuple(sites), rho=rho)


def entropy_density(state: PeriodicProductState, k: float = 1.0) -> float:
    """Per-site entropy of the periodic product state.

    For a product state the infinite-volume limit is exact at one period:
    the mean of the single-site entropies.
    """
    return float(np.mean([
        von_neumann_entropy(bloch_density_matrix(th), k=k) for th in state.thetas]))


def _trace_out_site(rho: np.ndarray, pos: int, num_sites: int) -> np.ndarray:
    dl = 2 ** pos
    dr = 2 ** (num_sites - pos - 1)
    t = rho.reshape(dl, 2, dr, dl, 2, dr)
    return np.trace(t, axis1=1, axis2=4).reshape(dl * dr, dl * dr)


def single_site_marginal(rho: np.ndarray, site: int, num_sites: int) -> np.ndarray:
    """Reduced 2x2 density matrix of one site of a qubit-chain block."""
    current = rho
    remaining = list(range(num_sites))
    for s in reversed(range(num_sites)):
        if s == site:
            continue
        current = _trace_out_site(current, remaining.index(s), len(remaining))
        remaining.remove(s)
    return current


def _project_local_free(P: np.ndarray, num_sites: int) -> np.ndarray:
    """Remove the trace and every traceless single-site marginal from P.

    The result is Hermitian with Tr P = 0 and Tr_{sites != r} P = 0 for all
    r, so rho0 + a P has exactly the same single-site marginals as rho0.
    """
    dim = P.shape[0]
    P = P - (np.trace(P) / dim) * np.eye(dim)
    for r in range(num_sites):
        Q = single_site_marginal(P, r, num_sites)
        Q -= (np.trace(Q) / 2.0) * np.eye(2)
        embed = np.array([[1.0 + 0j]])
        for s in range(num_sites):
            embed = np.kron(embed, Q if s == r else np.eye(2))
        P = P - embed / 2 ** (num_sites - 1)
    return P


def _max_psd_amplitude(rho0: np.ndarray, P: np.ndarray) -> float:
    """Largest a >= 0 with rho0 + a P positive semidefinite (bisection)."""
    def min_eig(a):
        return np.linalg.eigvalsh(rho0 + a * P).min()

    hi = 1.0
    for _ in range(60):
        if min_eig(hi) < 0:
            break
        hi *= 2.0
    else:
        return hi
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if min_eig(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class AuditReport:
    """Outcome of the marginal-constrained entropy maximization audit."""

    trials: int
    block_size: int
    target_density: float
    max_trial_density: float
    passed: bool
    seed: int
    collapsed: int
    max_marginal_error: float


def max_entropy_audit(target: PeriodicProductState, trials: int,
                      block_size: int = 2, seed: int = 0) -> AuditReport:
    """Sample block states with the target's single-site marginals and
    check none beats the product entropy density.

    Each trial perturbs the ``block_size``-period product block by a random
    Hermitian direction with all single-site partial traces removed, then
    rescales the amplitude by bisection until the matrix stays positive
    semidefinite.  Trials whose admissible amplitude collapses to zero are
    counted, not fatal.
    """
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if not 1 <= block_size <= 3:
        raise ParameterError(f"block_size must be in [1, 3], got {block_size}")
    n = target.period
    num_sites = n * block_size
    dim = 2 ** num_sites
    if dim > AUDIT_DIM_CAP:
        raise ParameterError(f"block dimension {dim} exceeds cap {AUDIT_DIM_CAP}")

    rho0 = product_block(target, periods=block_size).rho
    marginals = [bloch_density_matrix(th).rho for th in target.thetas]
    target_density = entropy_density(target)

    rng = np.random.default_rng(seed)
    streams = rng.spawn(trials)
    max_density = -np.inf
    collapsed = 0
    max_marg_err = 0.0
    passed = True
    for stream in streams:
        A = stream.normal(size=(dim, dim)) + 1j * stream.normal(size=(dim, dim))
        P = _project_local_free(0.5 * (A + A.conj().T), num_sites)
        scale = np.linalg.norm(P)
        if scale > 0:
            P /= scale
        a = 0.95 * _max_psd_amplitude(rho0, P)
        if a < 1e-12:
            collapsed += 1
            a = 0.0
        rho = rho0 + a * P
        for r in range(num_sites):
            err = np.abs(single_site_marginal(rho, r, num_sites)
                         - marginals[r % n]).max()
            max_marg_err = max(max_marg_err, err)
        density = von_neumann_entropy(rho) / num_sites
        max_density = max(max_density, density)
        if density > target_density + 1e-10:
            passed = False
        if a > 1e-6 and density > target_density - 1e-10:
            passed = False  # equality is only admissible for ~zero perturbations
    return AuditReport(trials=trials, block_size=block_size,
                       target_density=target_density,
                       max_trial_density=float(max_density), passed=passed,
                       seed=seed, collapsed=collapsed,
                       max_marginal_error=float(max_marg_err))
