"""Shared fixtures: reference parameter sets used across the suite.

The resonant single-mode set (epsilon = omega, gamma1 = kappa) has a
closed-form instability threshold eta1 = gamma1 * kappa / lambda^2 = 0.25,
which anchors several cross-checks.  The bad-cavity set (kappa much larger
than the atomic rates, strong coupling) reaches the chaotic regime within
the admissible pump range.
"""

import numpy as np
import pytest

from dickelab import MacroState, ModelParams, normal_fixed_point


def resonant_params(eta: float) -> ModelParams:
    return ModelParams(n=1, epsilon=1.0, gamma1=0.5, gamma2=0.8, eta=eta,
                       omega=[1.0], kappa=[0.5], lam=[1.0])


ETA1_RESONANT = 0.25  # gamma1 * kappa / lambda^2 for the set above


def bad_cavity_params(eta: float) -> ModelParams:
    return ModelParams(n=1, epsilon=1.0, gamma1=1.0, gamma2=1.5, eta=eta,
                       omega=[1.0], kappa=[10.0], lam=[16.0])


def two_mode_params(eta: float) -> ModelParams:
    # couplings favor mode 1: its threshold is 0.25, mode 0's is 2.78
    return ModelParams(n=2, epsilon=1.0, gamma1=0.5, gamma2=0.8, eta=eta,
                       omega=[1.0, 1.0], kappa=[0.5, 0.5], lam=[0.3, 1.0])


def random_params(rng: np.random.Generator, n: int = None) -> ModelParams:
    if n is None:
        n = int(rng.integers(1, 5))
    gamma1 = rng.uniform(0.1, 2.0)
    return ModelParams(
        n=n,
        epsilon=rng.uniform(0.1, 2.0),
        gamma1=gamma1,
        gamma2=rng.uniform(0.05, 2.0 * gamma1),
        eta=rng.uniform(-1.0, 1.0),
        omega=rng.uniform(0.2, 2.0, n),
        kappa=rng.uniform(0.1, 1.5, n),
        lam=rng.uniform(-1.5, 1.5, n),
    )


def random_symmetric_state(rng: np.random.Generator, n: int) -> MacroState:
    alpha = rng.normal(size=n) + 1j * rng.normal(size=n)
    s = rng.normal(size=n) + 1j * rng.normal(size=n)
    p = np.zeros(n, dtype=complex)
    p[0] = rng.normal()
    for l in range(1, n // 2 + 1):
        if l == n - l:
            p[l] = rng.normal()
        else:
            p[l] = rng.normal() + 1j * rng.normal()
            p[n - l] = np.conj(p[l])
    return MacroState(alpha, s, p)


def kicked_fixed_point(params: ModelParams, kick: float) -> MacroState:
    x0 = normal_fixed_point(params)
    alpha = x0.alpha.copy()
    alpha[0] += kick
    return MacroState(alpha, x0.s, x0.p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
