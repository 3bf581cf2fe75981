import numpy as np
import pytest

from dickelab import (
    MacroState,
    classify_phase,
    extract_limit_cycle,
    find_eta1,
    integrate_flow,
    jacobian_at,
    lyapunov_spectrum,
    macro_rhs,
    normal_fixed_point,
    pack_state,
    unpack_state,
)
from dickelab.errors import (
    MultiModeError,
    NoCrossingError,
    NotPeriodicError,
    ParameterError,
)
from dickelab.macroflow import Trajectory, _packed_rhs

from conftest import (
    ETA1_RESONANT,
    kicked_fixed_point,
    random_params,
    random_symmetric_state,
    resonant_params,
)


def rhs_transcription(state, params):
    """Independent literal transcription of the equations of motion,
    written with explicit scalar loops (oracle for the vectorized kernel)."""
    n = params.n
    a, s, p = state.alpha, state.s, state.p
    lam, om, ka = params.lam, params.omega, params.kappa
    da = np.zeros(n, complex)
    ds = np.zeros(n, complex)
    dp = np.zeros(n, complex)
    for l in range(n):
        da[l] = -(1j * om[l] + ka[l]) * a[l] + lam[l] * s[l]
        acc = 0
        for m in range(n):
            acc += lam[m] * p[(l - m) % n] * a[m]
        ds[l] = -(1j * params.epsilon + params.gamma1) * s[l] + acc
        acc = 0
        for m in range(n):
            acc += lam[m] * (np.conj(a[m]) * s[(l + m) % n]
                             + a[m] * np.conj(s[(m - l) % n]))
        dp[l] = -params.gamma2 * (p[l] - (params.eta if l == 0 else 0.0)) - 2 * acc
    return da, ds, dp


class TestMacroRhs:
    def test_normal_fixed_point_is_exact_zero(self, rng):
        for _ in range(20):
            params = random_params(rng)
            d = macro_rhs(normal_fixed_point(params), params)
            assert np.abs(d.alpha).max() == 0
            assert np.abs(d.s).max() == 0
            assert np.abs(d.p).max() == 0

    def test_decoupled_linear_decay(self):
        params = resonant_params(0.3)
        params = type(params)(n=1, epsilon=params.epsilon, gamma1=params.gamma1,
                              gamma2=params.gamma2, eta=params.eta,
                              omega=params.omega, kappa=params.kappa, lam=[0.0])
        d = macro_rhs(MacroState([1.0], [0.0], [0.0]), params)
        assert d.alpha[0] == pytest.approx(-(1j * 1.0 + 0.5))
        d = macro_rhs(MacroState([0.0], [1.0], [0.0]), params)
        assert d.s[0] == pytest.approx(-(1j * 1.0 + 0.5))
        d = macro_rhs(MacroState([0.0], [0.0], [0.1]), params)
        assert d.p[0] == pytest.approx(-0.8 * (0.1 - 0.3))

    def test_against_literal_transcription(self, rng):
        for _ in range(50):
            params = random_params(rng, n=2)
            state = random_symmetric_state(rng, 2)
            got = macro_rhs(state, params)
            da, ds, dp = rhs_transcription(state, params)
            assert np.abs(got.alpha - da).max() < 1e-14
            assert np.abs(got.s - ds).max() < 1e-14
            assert np.abs(got.p - dp).max() < 1e-14

    def test_gauge_equivariance(self, rng):
        for _ in range(50):
            params = random_params(rng)
            state = random_symmetric_state(rng, params.n)
            theta = rng.uniform(0, 2 * np.pi)
            ph = np.exp(1j * theta)
            rotated = MacroState(ph * state.alpha, ph * state.s, state.p)
            d = macro_rhs(state, params)
            dr = macro_rhs(rotated, params)
            assert np.abs(dr.alpha - ph * d.alpha).max() < 1e-14
            assert np.abs(dr.s - ph * d.s).max() < 1e-14
            assert np.abs(dr.p - d.p).max() < 1e-14

    def test_derivative_preserves_symmetry_exactly(self, rng):
        for n in (2, 3, 4, 5):
            state = random_symmetric_state(rng, n)
            params = random_params(rng, n=n)
            d = macro_rhs(state, params)
            assert d.p[0].imag == 0
            for l in range(1, n):
                assert d.p[l] == np.conj(d.p[n - l])


class TestNormalFixedPoint:
    def test_layout(self):
        params = random_params(np.random.default_rng(3), n=2)
        params = type(params)(n=2, epsilon=1, gamma1=1, gamma2=1, eta=0.3,
                              omega=[1, 1], kappa=[1, 1], lam=[1, 1])
        fp = normal_fixed_point(params)
        assert np.array_equal(fp.alpha, [0, 0])
        assert np.array_equal(fp.s, [0, 0])
        assert np.array_equal(fp.p, [0.3, 0])

    def test_zero_pump_gives_zero_state(self):
        fp = normal_fixed_point(resonant_params(0.0))
        assert np.abs(pack_state(fp)).max() == 0


class TestJacobian:
    def test_matches_central_differences(self, rng):
        # permanent oracle: relative deviation < 1e-5 at step 1e-6
        for _ in range(100):
            params = random_params(rng)
            n = params.n
            v = rng.normal(size=5 * n)
            J = jacobian_at(unpack_state(v, n), params)
            h = 1e-6
            Jfd = np.empty((5 * n, 5 * n))
            for j in range(5 * n):
                e = np.zeros(5 * n)
                e[j] = h
                Jfd[:, j] = (_packed_rhs(v + e, params)
                             - _packed_rhs(v - e, params)) / (2 * h)
            scale = max(1.0, np.abs(Jfd).max())
            assert np.abs(J - Jfd).max() / scale < 1e-5

    def test_decoupled_blocks(self):
        params = type(resonant_params(0.3))(
            n=1, epsilon=1.3, gamma1=0.4, gamma2=0.6, eta=0.3,
            omega=[0.9], kappa=[0.2], lam=[0.0])
        J = jacobian_at(random_symmetric_state(np.random.default_rng(0), 1), params)
        # alpha block: multiplication by -(i omega + kappa)
        assert np.allclose(J[0:2, 0:2], [[-0.2, 0.9], [-0.9, -0.2]])
        assert np.allclose(J[2:4, 2:4], [[-0.4, 1.3], [-1.3, -0.4]])
        assert J[4, 4] == pytest.approx(-0.6)
        # no cross blocks at lambda = 0
        J[0:2, 0:2] = J[2:4, 2:4] = 0
        J[4, 4] = 0
        assert np.abs(J).max() == 0

    def test_fixed_point_eigenvalues_resonant(self):
        # at resonance the (alpha, s) eigenvalues are -(i omega + g) +- lam sqrt(eta)
        params = resonant_params(0.16)
        eigs = np.linalg.eigvals(jacobian_at(normal_fixed_point(params), params))
        expected = np.array([
            -(1j + 0.5) + 0.4, -(1j + 0.5) - 0.4,
            -(-1j + 0.5) + 0.4, -(-1j + 0.5) - 0.4,
            -0.8,
        ])
        assert np.allclose(np.sort_complex(eigs), np.sort_complex(expected), atol=1e-12)


class TestIntegrateFlow:
    def test_fixed_point_stays_put(self):
        params = resonant_params(0.3)
        fp = normal_fixed_point(params)
        traj = integrate_flow(fp, params, t_end=10.0, tol=1e-8, sample_dt=0.5)
        dev = np.abs(traj.ys - pack_state(fp)[None, :]).max()
        assert dev < 1e-8

    def test_decoupled_closed_form(self):
        params = type(resonant_params(0.3))(
            n=1, epsilon=1.2, gamma1=0.3, gamma2=0.5, eta=0.4,
            omega=[0.8], kappa=[0.6], lam=[0.0])
        a0, s0, p0 = 0.7 - 0.2j, -0.3 + 0.4j, 0.1
        tol = 1e-9
        traj = integrate_flow(MacroState([a0], [s0], [p0]), params,
                              t_end=5.0, tol=tol, sample_dt=0.25)
        for t, state in zip(traj.times, traj.states):
            assert abs(state.alpha[0] - a0 * np.exp(-(1j * 0.8 + 0.6) * t)) < 10 * tol
            assert abs(state.s[0] - s0 * np.exp(-(1j * 1.2 + 0.3) * t)) < 10 * tol
            expected_p = 0.4 + (p0 - 0.4) * np.exp(-0.5 * t)
            assert abs(state.p[0] - expected_p) < 10 * tol

    def test_below_threshold_converges_to_fixed_point(self):
        params = resonant_params(0.15)
        x0 = kicked_fixed_point(params, 0.01)
        t_end = 50.0 / params.gamma2
        traj = integrate_flow(x0, params, t_end=t_end, tol=1e-10, sample_dt=1.0)
        dist = np.linalg.norm(traj.ys[-1] - pack_state(normal_fixed_point(params)))
        assert dist < 1e-4

    def test_semigroup_property(self):
        params = resonant_params(0.3)
        x0 = kicked_fixed_point(params, 0.1)
        tol = 1e-10
        t1, t2 = 7.3, 5.9
        direct = integrate_flow(x0, params, t_end=t1 + t2, tol=tol, sample_dt=t1 + t2)
        first = integrate_flow(x0, params, t_end=t1, tol=tol, sample_dt=t1)
        second = integrate_flow(unpack_state(first.ys[-1], 1), params,
                                t_end=t2, tol=tol, sample_dt=t2)
        assert np.abs(second.ys[-1] - direct.ys[-1]).max() < 10 * tol

    def test_invalid_tolerance_rejected(self):
        params = resonant_params(0.3)
        with pytest.raises(ParameterError, match="tol"):
            integrate_flow(normal_fixed_point(params), params, t_end=1.0, tol=0.1)

    def test_normal_phase_contracts_to_fixed_point(self, rng):
        # envelope of the distance decreases through the whole tail
        params = resonant_params(0.1)
        vfp = pack_state(normal_fixed_point(params))
        for _ in range(20):
            x0 = random_symmetric_state(rng, 1)
            x0 = MacroState(0.3 * x0.alpha, 0.3 * x0.s,
                            np.clip(x0.p.real, -0.9, 0.9))
            traj = integrate_flow(x0, params, t_end=60.0, tol=1e-9, sample_dt=0.25)
            dist = np.linalg.norm(traj.ys - vfp[None, :], axis=1)
            post = dist[traj.times >= 20.0]
            # one rotation period spans ~25 samples; compare window maxima
            windows = [post[i:i + 32].max() for i in range(0, len(post) - 32, 32)]
            assert all(b < a for a, b in zip(windows, windows[1:]))
            assert post[-1] < 1e-3 * dist[0]


class TestFindEta1:
    def test_resonant_threshold_value(self):
        crossing = find_eta1(resonant_params(0.0), (0.0, 1.0))
        assert crossing.eta1 == pytest.approx(ETA1_RESONANT, abs=1e-7)
        assert crossing.eta1 > 0
        assert crossing.frequency > 0.5  # Im = omega at resonance
        assert crossing.bracket[1] - crossing.bracket[0] < 1e-8

    def test_no_crossing_without_coupling(self):
        params = type(resonant_params(0.0))(
            n=1, epsilon=1.0, gamma1=0.5, gamma2=0.8, eta=0.0,
            omega=[1.0], kappa=[0.5], lam=[0.0])
        with pytest.raises(NoCrossingError, match="no sign change"):
            find_eta1(params, (-1.0, 1.0))

    def test_bisection_agrees_with_trajectory_switch(self):
        # independent route: bisect on growth/decay of a tiny kick
        params = resonant_params(0.0)
        lo, hi = 0.2, 0.3
        for _ in range(7):
            mid = 0.5 * (lo + hi)
            pr = resonant_params(mid)
            traj = integrate_flow(kicked_fixed_point(pr, 1e-6), pr,
                                  t_end=400.0, tol=1e-10, sample_dt=2.0)
            n_half = len(traj.times) // 2
            amp = np.hypot(traj.ys[:, 0], traj.ys[:, 1])
            slope = np.polyfit(traj.times[n_half:], np.log(amp[n_half:]), 1)[0]
            if slope > 0:
                hi = mid
            else:
                lo = mid
        eta1_traj = 0.5 * (lo + hi)
        crossing = find_eta1(params, (0.0, 1.0))
        assert abs(crossing.eta1 - eta1_traj) < 1e-3


class TestLyapunov:
    def test_linear_system_exact_exponents(self):
        params = type(resonant_params(0.3))(
            n=1, epsilon=1.0, gamma1=0.5, gamma2=0.8, eta=0.3,
            omega=[1.0], kappa=[0.7], lam=[0.0])
        spec = lyapunov_spectrum(params, MacroState([0.3], [0.2], [0.1]),
                                 t_transient=5.0, t_sample=50.0)
        expected = np.array([-0.5, -0.5, -0.7, -0.7, -0.8])
        assert np.abs(np.sort(spec)[::-1] - expected).max() < 1e-3

    def test_normal_phase_matches_linearization(self):
        params = resonant_params(0.1)
        x0 = kicked_fixed_point(params, 0.05)
        spec = lyapunov_spectrum(params, x0, t_transient=30.0, t_sample=120.0)
        eigs = np.linalg.eigvals(jacobian_at(normal_fixed_point(params), params))
        assert spec.max() < 0
        assert abs(spec.max() - eigs.real.max()) < 0.05


def synthetic_cycle_trajectory(nu=2.0, k=0, alpha0=0.5, s0=0.3, p0=0.7,
                               phase=0.0, n=1):
    params = type(resonant_params(0.3))(
        n=n, epsilon=1.0, gamma1=0.5, gamma2=0.8, eta=0.3,
        omega=[1.0] * n, kappa=[0.5] * n, lam=[1.0] * n)
    times = np.linspace(0.0, 40.0, 1201)
    ys = np.zeros((times.size, 5 * n))
    alpha = np.zeros((times.size, n), complex)
    s = np.zeros((times.size, n), complex)
    alpha[:, k] = alpha0 * np.exp(-1j * (nu * times + phase))
    s[:, k] = s0 * np.exp(-1j * (nu * times + phase))
    for i, t in enumerate(times):
        p = np.zeros(n, complex)
        p[0] = p0
        ys[i] = pack_state(MacroState(alpha[i], s[i], p))
    return Trajectory(times, ys, params, None)


class TestExtractLimitCycle:
    def test_recovers_synthetic_parametrization(self):
        traj = synthetic_cycle_trajectory(nu=2.0, k=0, alpha0=0.5, s0=0.3,
                                          p0=0.7, phase=0.4)
        cycle = extract_limit_cycle(traj)
        assert cycle.nu == pytest.approx(2.0, abs=1e-6)
        assert cycle.mode == 0
        assert cycle.alpha0 == pytest.approx(0.5, abs=1e-6)
        assert cycle.s0 == pytest.approx(0.3, abs=1e-6)
        assert cycle.p0 == pytest.approx(0.7, abs=1e-6)
        assert cycle.phase_alpha == pytest.approx(0.4, abs=1e-6)
        assert cycle.phase_s == pytest.approx(0.4, abs=1e-6)

    def test_mode_selection_n2(self):
        traj = synthetic_cycle_trajectory(nu=1.5, k=1, n=2)
        cycle = extract_limit_cycle(traj)
        assert cycle.mode == 1
        assert cycle.nu == pytest.approx(1.5, abs=1e-6)

    def test_decayed_trajectory_not_periodic(self):
        params = resonant_params(0.1)
        traj = integrate_flow(kicked_fixed_point(params, 0.1), params,
                              t_end=120.0, tol=1e-10, sample_dt=0.1)
        with pytest.raises(NotPeriodicError):
            extract_limit_cycle(traj.after(80.0))

    def test_two_active_modes_rejected(self):
        base = synthetic_cycle_trajectory(n=2)
        ys = base.ys.copy()
        ys[:, 2] += 0.05  # light up the second mode amplitude
        with pytest.raises(MultiModeError):
            extract_limit_cycle(Trajectory(base.times, ys, base.params, None))

    def test_real_orbit_inversion_clamps_at_threshold(self):
        # on the coherent orbit the inversion sits at the instability value
        params = resonant_params(0.3)
        traj = integrate_flow(kicked_fixed_point(params, 0.1), params,
                              t_end=420.0, tol=1e-10, sample_dt=0.05)
        cycle = extract_limit_cycle(traj.after(350.0))
        crossing = find_eta1(resonant_params(0.0), (0.0, 1.0))
        assert abs(cycle.p0 - crossing.eta1) < 1e-2
        assert cycle.nu == pytest.approx(1.0, abs=1e-4)
        assert abs(cycle.alpha0 - np.sqrt(0.8 * (0.3 - 0.25) / (4 * 0.5))) < 1e-4


class TestClassifyPhase:
    def test_zero_pump_is_normal(self):
        params = resonant_params(0.0)
        portrait = classify_phase(params, kicked_fixed_point(params, 0.1))
        assert portrait.label == "normal"
        assert portrait.fixed_point is not None
        assert portrait.lyapunov[0] < 0
        eigs = np.linalg.eigvals(jacobian_at(portrait.fixed_point, params))
        assert eigs.real.max() < 0

    def test_undetermined_when_not_settled(self):
        # short windows near threshold: conflicting evidence stays unlabeled
        params = resonant_params(0.26)
        portrait = classify_phase(params, kicked_fixed_point(params, 0.1),
                                  t_transient=20.0, t_observe=30.0,
                                  lyap_sample=40.0)
        assert portrait.label in ("undetermined", "coherent")
