import numpy as np
import pytest
from scipy.integrate import solve_ivp

from photonserver.qed import (E0, G0, G1, U0, IntegrationError, PulseShape,
                              QedParams, build_model, emission_probability,
                              fit_coupling_scale, propagate,
                              pure_state_density, validate_density)


@pytest.fixture(scope="module")
def default_traj():
    model = build_model(QedParams(), PulseShape())
    return propagate(model, pure_state_density(U0), 1.0, 4000.0)


class TestModel:
    def test_no_drive_initial_state_stationary(self):
        model = build_model(QedParams(), PulseShape(omega_max_mhz=0.0))
        traj = propagate(model, pure_state_density(U0), 1.0, 500.0)
        np.testing.assert_allclose(traj.populations[:, U0], 1.0, atol=1e-12)

    def test_ground_state_dark(self):
        model = build_model(QedParams(), PulseShape())
        traj = propagate(model, pure_state_density(G0), 1.0, 500.0)
        np.testing.assert_allclose(traj.populations[:, G0], 1.0, atol=1e-12)
        assert emission_probability(traj) == 0.0

    def test_hamiltonian_hermitian(self):
        params = QedParams(delta_trigger_mhz=1.5, delta_cavity_mhz=-0.7)
        model = build_model(params, PulseShape())
        for t in (0.0, 137.0, 2000.0, 3999.0):
            h = model.hamiltonian(t)
            np.testing.assert_allclose(h, h.conj().T, atol=1e-14)

    def test_zero_coupling_matrix_element(self):
        params = QedParams(coupling_scale=1e-9)
        model = build_model(params, PulseShape())
        assert abs(model.hamiltonian(100.0)[E0, G1]) < 1e-9

    def test_pulse_vanishes_outside_support(self):
        pulse = PulseShape()
        assert pulse.omega(-1.0) == 0.0
        assert pulse.omega(4001.0) == 0.0
        assert pulse.omega(2000.0) > 0.0


class TestPropagation:
    def test_pure_cavity_decay_exponential(self):
        # drive and atom-cavity coupling off: |g,1> drains at exactly 2*kappa
        params = QedParams(coupling_scale=1e-12)
        model = build_model(params, PulseShape(omega_max_mhz=0.0))
        traj = propagate(model, pure_state_density(G1), 1.0, 100.0)
        expected = np.exp(-2.0 * params.kappa * traj.t_ns)
        np.testing.assert_allclose(traj.populations[:, G1], expected, atol=1e-6)

    def test_unit_photon_leaves(self):
        model = build_model(QedParams(coupling_scale=1e-12),
                            PulseShape(omega_max_mhz=0.0))
        traj = propagate(model, pure_state_density(G1), 0.5, 300.0)
        assert emission_probability(traj) == pytest.approx(1.0, abs=1e-4)

    def test_trace_preserved(self, default_traj):
        drift = np.abs(default_traj.populations.sum(axis=1) - 1.0)
        assert drift.max() < 1e-8

    def test_populations_nonnegative(self, default_traj):
        assert default_traj.populations.min() > -1e-9

    def test_emission_ledger(self, default_traj):
        # every atom ends in |g,0>: via the cavity or via free-space decay
        cavity = emission_probability(default_traj)
        free_space = default_traj.free_space_emission_to_g()
        assert cavity + free_space == pytest.approx(
            default_traj.populations[-1, G0], abs=1e-6)

    def test_step_halving_self_consistency(self, default_traj):
        model = build_model(QedParams(), PulseShape())
        half = propagate(model, pure_state_density(U0), 0.5, 4000.0)
        assert abs(emission_probability(default_traj)
                   - emission_probability(half)) < 1e-6

    def test_against_adaptive_ode_oracle(self):
        """Independent integration route: scipy RK45 at tight tolerance."""
        params = QedParams()
        pulse = PulseShape()
        model = build_model(params, pulse)

        def rhs(t, y):
            return (model.l0 + pulse.omega(t) * model.l1) @ y

        y0 = pure_state_density(U0).reshape(-1)
        sol = solve_ivp(rhs, (0.0, 4000.0), y0, rtol=1e-10, atol=1e-12)
        rho_end = sol.y[:, -1].reshape(4, 4)
        traj = propagate(model, pure_state_density(U0), 1.0, 4000.0)
        np.testing.assert_allclose(traj.populations[-1],
                                   np.diag(rho_end).real, atol=1e-7)

    def test_emission_exceeds_half_at_full_coupling(self, default_traj):
        # frozen from the adaptive-oracle run: 0.76476 at the defaults
        p = emission_probability(default_traj)
        assert p >= 0.5
        assert p == pytest.approx(0.764756, abs=1e-4)

    def test_dt_must_divide(self):
        model = build_model(QedParams(), PulseShape())
        with pytest.raises(ValueError):
            propagate(model, pure_state_density(U0), 3.0, 4000.0)

    def test_coarse_step_raises_integration_error(self):
        model = build_model(QedParams(),
                            PulseShape(omega_max_mhz=80.0, profile="constant"))
        with pytest.raises(IntegrationError):
            propagate(model, pure_state_density(U0), 100.0, 4000.0)

    def test_final_state_valid(self, default_traj):
        assert default_traj.flux.min() >= 0.0
        assert emission_probability(default_traj) <= 1.0

    def test_invalid_initial_state_rejected(self):
        model = build_model(QedParams(), PulseShape())
        bad = np.zeros((4, 4), dtype=complex)
        bad[0, 0] = 0.5  # trace != 1
        with pytest.raises(ValueError):
            propagate(model, bad, 1.0, 100.0)


class TestEmissionProbability:
    def test_zero_flux(self):
        model = build_model(QedParams(), PulseShape(omega_max_mhz=0.0))
        traj = propagate(model, pure_state_density(U0), 1.0, 100.0)
        assert emission_probability(traj) == 0.0

    def test_monotone_in_coupling_scale(self):
        pulse = PulseShape()
        probs = []
        for scale in np.linspace(0.1, 1.0, 10):
            model = build_model(QedParams(coupling_scale=scale), pulse)
            traj = propagate(model, pure_state_density(U0), 2.0, 4000.0)
            probs.append(emission_probability(traj))
        assert all(b > a for a, b in zip(probs, probs[1:]))


class TestFitCouplingScale:
    def test_fixed_point_full_coupling(self, default_traj):
        p_full = emission_probability(default_traj)
        scale = fit_coupling_scale(QedParams(), PulseShape(), p_full)
        assert scale == pytest.approx(1.0, abs=1e-3)

    def test_nine_percent_target(self):
        params, pulse = QedParams(), PulseShape()
        scale = fit_coupling_scale(params, pulse, 0.09)
        assert 0.0 < scale < 1.0
        model = build_model(QedParams(coupling_scale=scale), pulse)
        traj = propagate(model, pure_state_density(U0), 1.0, pulse.duration_ns)
        assert emission_probability(traj) == pytest.approx(0.09, abs=1e-3)

    def test_monotone_in_target(self):
        params, pulse = QedParams(), PulseShape()
        s1 = fit_coupling_scale(params, pulse, 0.05, dt=2.0)
        s2 = fit_coupling_scale(params, pulse, 0.20, dt=2.0)
        s3 = fit_coupling_scale(params, pulse, 0.50, dt=2.0)
        assert s1 < s2 < s3

    def test_unreachable_target(self):
        with pytest.raises(ValueError):
            fit_coupling_scale(QedParams(), PulseShape(), 0.99)
        with pytest.raises(ValueError):
            fit_coupling_scale(QedParams(), PulseShape(), 0.0)


class TestTrajectoryExport:
    def test_csv_columns(self, default_traj, tmp_path):
        text = default_traj.to_csv(tmp_path / "traj.csv")
        lines = text.splitlines()
        assert lines[0] == "t_ns,rho_uu,rho_ee,rho_g1,rho_g0,flux_per_ns"
        assert len(lines) == default_traj.t_ns.size + 1
        first = [float(x) for x in lines[1].split(",")]
        assert first[0] == 0.0
        assert first[1] == pytest.approx(1.0)


class TestValidateDensity:
    def test_accepts_valid(self):
        validate_density(pure_state_density(G0))

    def test_rejects_nonhermitian(self):
        rho = pure_state_density(U0)
        rho[0, 1] = 0.5
        with pytest.raises(ValueError):
            validate_density(rho)

    def test_rejects_negative_population(self):
        rho = np.diag([1.2, -0.2, 0.0, 0.0]).astype(complex)
        with pytest.raises(ValueError):
            validate_density(rho)
