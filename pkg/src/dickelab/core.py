"""Model parameters, phase-space coordinates and the classical field.

A chain of two-level atoms (level splitting ``epsilon``, transverse and
longitudinal damping ``gamma1``/``gamma2``, pump ``eta``) couples to ``n``
damped radiation modes (frequencies ``omega``, dampings ``kappa``, real
couplings ``lam``).  The macroscopic phase point collects complex mode
amplitudes ``alpha``, polarizations ``s`` and inversions ``p``; the
inversions satisfy p[l] == conj(p[n-l]) so a point has exactly 5n real
degrees of freedom.  This module fixes the canonical bijection between
that complex view and a flat real vector used by integrators, Jacobians
and file output.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import PackingError, ParameterError

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the model.

    Per-mode arrays omega, kappa, lam all have length n.  Construction
    coerces types; admissibility is checked by :func:`validate_params`.
    """

    n: int
    epsilon: float
    gamma1: float
    gamma2: float
    eta: float
    omega: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n", int(self.n))
        for name in ("epsilon", "gamma1", "gamma2", "eta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("omega", "kappa", "lam"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)

    @property
    def gamma_min(self) -> float:
        """Slowest atomic decay rate min(gamma1, gamma2)."""
        return min(self.gamma1, self.gamma2)


def validate_params(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged if every admissibility constraint holds.

    Raises ParameterError naming the violated inequality otherwise.
    Boundary values gamma2 == 2*gamma1 and |eta| == 1 are admissible.
    """
    if params.n < 1:
        raise ParameterError(f"n must be >= 1, got {params.n}")
    for name in ("omega", "kappa", "lam"):
        arr = getattr(params, name)
        if arr.shape != (params.n,):
            raise ParameterError(
                f"{name} must have length n={params.n}, got shape {arr.shape}")
    if not params.epsilon > 0:
        raise ParameterError(f"epsilon must be > 0, got {params.epsilon}")
    if not params.gamma2 > 0:
        raise ParameterError(f"gamma2 must be > 0, got {params.gamma2}")
    if params.gamma2 > 2 * params.gamma1:
        raise ParameterError(
            f"gamma2 exceeds 2*gamma1 ({params.gamma2} > {2 * params.gamma1})")
    if not -1 <= params.eta <= 1:
        raise ParameterError(f"eta outside [-1, 1], got {params.eta}")
    if not np.all(params.omega > 0):
        raise ParameterError("all omega must be > 0")
    if not np.all(params.kappa > 0):
        raise ParameterError("all kappa must be > 0")
    return params


@dataclass(frozen=True)
class MacroState:
    """Macroscopic phase point (alpha, s, p), each a complex n-vector."""

    alpha: np.ndarray
    s: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "s", "p"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=complex))
            object.__setattr__(self, name, arr)
        n = self.alpha.size
        if self.s.size != n or self.p.size != n:
            raise PackingError(
                f"alpha, s, p must share one length, got "
                f"{self.alpha.size}, {self.s.size}, {self.p.size}")

    @property
    def n(self) -> int:
        return self.alpha.size


@lru_cache(maxsize=None)
def _p_layout(n: int):
    """Independent real degrees of freedom of a symmetric p-vector.

    Returns a tuple of (l, part) pairs, part in {"re", "im"}, in packing
    order: p0, then (Re, Im) of p_l for 0 < l < n/2, then p_{n/2} when n
    is even.  Exactly n entries.
    """
    layout = [(0, "re")]
    for l in range(1, (n - 1) // 2 + 1):
        layout.append((l, "re"))
        layout.append((l, "im"))
    if n % 2 == 0 and n > 1:
        layout.append((n // 2, "re"))
    return tuple(layout)


@lru_cache(maxsize=None)
def _p_layout_arrays(n: int):
    layout = _p_layout(n)
    l_idx = np.array([l for l, _ in layout])
    is_re = np.array([part == "re" for _, part in layout])
    return l_idx, is_re


@lru_cache(maxsize=None)
def p_dof_matrix(n: int) -> np.ndarray:
    """Complex (n, n) matrix C with p = C @ u for packed real dofs u."""
    layout = _p_layout(n)
    C = np.zeros((n, n), dtype=complex)
    for k, (l, part) in enumerate(layout):
        unit = 1.0 if part == "re" else 1.0j
        C[l, k] += unit
        if 0 < l < n - l:
            C[n - l, k] += np.conj(unit)
    C.setflags(write=False)
    return C


def _check_p_symmetry(p: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    n = p.size
    if abs(p[0].imag) > tol:
        raise PackingError(f"p[0] must be real, imaginary part {p[0].imag:g}")
    for l in range(1, n):
        dev = abs(p[l] - np.conj(p[n - l]))
        if dev > tol:
            raise PackingError(
                f"conjugation symmetry broken: |p[{l}] - conj(p[{n - l}])| = {dev:g}")


def pack_state(state: MacroState, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Pack a symmetric MacroState into its 5n real coordinates.

    Layout: [Re a0, Im a0, .., Re s0, Im s0, .., p0, Re p1, Im p1, ..].
    Raises PackingError if p violates the conjugation symmetry beyond tol.
    """
    _check_p_symmetry(state.p, tol)
    return _pack_unchecked(state)


def _pack_unchecked(state: MacroState) -> np.ndarray:
    n = state.n
    v = np.empty(5 * n)
    v[0:2 * n:2] = state.alpha.real
    v[1:2 * n:2] = state.alpha.imag
    v[2 * n:4 * n:2] = state.s.real
    v[2 * n + 1:4 * n:2] = state.s.imag
    l_idx, is_re = _p_layout_arrays(n)
    pl = state.p[l_idx]
    v[4 * n:] = np.where(is_re, pl.real, pl.imag)
    return v


def unpack_state(vec: np.ndarray, n: int) -> MacroState:
    """Inverse of :func:`pack_state`; raises PackingError on length mismatch."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (5 * n,):
        raise PackingError(f"expected vector of length {5 * n}, got shape {vec.shape}")
    alpha = vec[0:2 * n:2] + 1j * vec[1:2 * n:2]
    s = vec[2 * n:4 * n:2] + 1j * vec[2 * n + 1:4 * n:2]
    p = p_dof_matrix(n) @ vec[4 * n:]
    return MacroState(alpha, s, p)


def site_phases(r: int, n: int) -> np.ndarray:
    """e^{2 pi i r l / n} for l = 0..n-1, reduced so r and r+n agree exactly."""
    return np.exp(2j * np.pi * (r % n) * np.arange(n) / n)


def field_at_site(r: int, alpha: np.ndarray, lam: np.ndarray) -> complex:
    """Classical field at site r: -i * sum_l lam_l alpha_l e^{2 pi i r l / n}.

    Periodic in r with period n = len(alpha), exactly.
    """
    alpha = np.asarray(alpha, dtype=complex)
    lam = np.asarray(lam, dtype=float)
    return complex(-1j * np.sum(lam * alpha * site_phases(r, alpha.size)))
