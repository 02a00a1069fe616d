"""Density-matrix model of the driven three-level atom coupled to one
lossy cavity mode.

Basis (index order) for the single-excitation manifold:

    0 = |u,0>   F=3 ground state, no cavity photon
    1 = |e,0>   excited state, no cavity photon
    2 = |g,1>   F=2 ground state, one cavity photon
    3 = |g,0>   F=2 ground state, photon emitted (terminal)

The trigger pulse couples |u,0> <-> |e,0> with Rabi frequency Omega(t),
the cavity couples |e,0> <-> |g,1> with strength coupling_scale * g.
Dissipation: cavity field decay kappa empties |g,1> -> |g,0> at rate
2*kappa; spontaneous emission empties |e,0> at total rate 2*gamma, a
fraction branch_u of it back to |u,0> and the rest to |g,0>.

All frequencies are entered in MHz (2*pi is applied internally); the
integration grid is in nanoseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels

TWO_PI_MHZ_TO_RAD_PER_NS = 2.0 * math.pi * 1e-3

U0, E0, G1, G0 = 0, 1, 2, 3
BASIS_LABELS = ("u0", "e0", "g1", "g0")
TRAJECTORY_CSV_HEADER = "t_ns,rho_uu,rho_ee,rho_g1,rho_g0,flux_per_ns"


class IntegrationError(RuntimeError):
    """Master-equation integration lost trace conservation (dt too coarse)."""


@dataclass(frozen=True)
class QedParams:
    """Atom-cavity parameters.  Rates/detunings in MHz (linear, not angular).

    delta_trigger / delta_cavity are the trigger-laser and cavity
    detunings from the Stark-shifted |u>-|e> and |g>-|e> lines; the
    defaults (0, 0) put the Raman process on two-photon resonance.
    stark_shift_mhz is informational only: detunings are already given
    relative to the shifted lines.
    """

    g_mhz: float = 5.0
    kappa_mhz: float = 5.0
    gamma_mhz: float = 3.0
    delta_trigger_mhz: float = 0.0
    delta_cavity_mhz: float = 0.0
    stark_shift_mhz: float = 70.0
    branch_u: float = 0.5
    coupling_scale: float = 1.0

    def __post_init__(self):
        if self.g_mhz <= 0 or self.kappa_mhz <= 0 or self.gamma_mhz <= 0:
            raise ValueError("g, kappa, gamma must be positive")
        if not 0.0 <= self.branch_u <= 1.0:
            raise ValueError("branch_u must be in [0, 1]")
        if not 0.0 < self.coupling_scale <= 1.0:
            raise ValueError("coupling_scale must be in (0, 1]")

    # angular frequencies on the ns grid
    @property
    def g(self) -> float:
        return self.g_mhz * TWO_PI_MHZ_TO_RAD_PER_NS

    @property
    def kappa(self) -> float:
        return self.kappa_mhz * TWO_PI_MHZ_TO_RAD_PER_NS

    @property
    def gamma(self) -> float:
        return self.gamma_mhz * TWO_PI_MHZ_TO_RAD_PER_NS

    @property
    def delta_trigger(self) -> float:
        return self.delta_trigger_mhz * TWO_PI_MHZ_TO_RAD_PER_NS

    @property
    def delta_cavity(self) -> float:
        return self.delta_cavity_mhz * TWO_PI_MHZ_TO_RAD_PER_NS


@dataclass(frozen=True)
class PulseShape:
    """Trigger-pulse envelope Omega(t), zero outside [0, duration_ns]."""

    omega_max_mhz: float = 10.0
    duration_ns: float = 4_000.0
    profile: str = "sin2"

    def __post_init__(self):
        if self.omega_max_mhz < 0:
            raise ValueError("omega_max must be >= 0")
        if self.duration_ns <= 0:
            raise ValueError("duration must be positive")
        if self.profile not in ("sin2", "constant"):
            raise ValueError(f"unknown profile {self.profile!r}")

    def omega(self, t_ns) -> np.ndarray:
        """Rabi frequency in rad/ns at time(s) t_ns."""
        t = np.asarray(t_ns, dtype=float)
        peak = self.omega_max_mhz * TWO_PI_MHZ_TO_RAD_PER_NS
        inside = (t >= 0.0) & (t <= self.duration_ns)
        if self.profile == "constant":
            out = np.where(inside, peak, 0.0)
        else:
            s = np.sin(np.pi * np.clip(t / self.duration_ns, 0.0, 1.0))
            out = np.where(inside, peak * s * s, 0.0)
        return out if out.ndim else float(out)


def pure_state_density(index: int) -> np.ndarray:
    rho = np.zeros((4, 4), dtype=np.complex128)
    rho[index, index] = 1.0
    return rho


def validate_density(rho: np.ndarray, *, herm_tol: float = 1e-10,
                     trace_tol: float = 1e-9, diag_floor: float = -1e-12) -> None:
    """Check Hermiticity, unit trace and positivity of the diagonal."""
    if rho.shape != (4, 4):
        raise ValueError("density matrix must be 4x4")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix not Hermitian")
    if abs(rho.trace().real - 1.0) > trace_tol or abs(rho.trace().imag) > trace_tol:
        raise ValueError("density matrix trace differs from 1")
    if np.min(np.diag(rho).real) < diag_floor:
        raise ValueError("negative population")


def _vec_left(a: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> a @ rho for row-major vec()."""
    return np.kron(a, np.eye(4))


def _vec_right(b: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> rho @ b for row-major vec()."""
    return np.kron(np.eye(4), b.T)


class QedModel:
    """Time-dependent generator of the master equation.

    Split as  d vec(rho)/dt = (L0 + Omega(t) * L1) vec(rho)  with L0 the
    drive-independent part (detunings, cavity coupling, dissipators) and
    L1 the unit-amplitude trigger coupling.
    """

    def __init__(self, params: QedParams, pulse: PulseShape):
        self.params = params
        self.pulse = pulse

        h_static = np.zeros((4, 4), dtype=np.complex128)
        h_static[E0, E0] = -params.delta_trigger
        h_static[G1, G1] = -(params.delta_trigger - params.delta_cavity)
        geff = params.coupling_scale * params.g
        h_static[E0, G1] = geff
        h_static[G1, E0] = geff
        self.h_static = h_static

        h_drive = np.zeros((4, 4), dtype=np.complex128)
        h_drive[U0, E0] = 0.5
        h_drive[E0, U0] = 0.5
        self.h_drive = h_drive

        jumps = []
        jumps.append(math.sqrt(2.0 * params.kappa) * _ketbra(G0, G1))
        if params.branch_u > 0.0:
            jumps.append(math.sqrt(2.0 * params.gamma * params.branch_u) * _ketbra(U0, E0))
        if params.branch_u < 1.0:
            jumps.append(math.sqrt(2.0 * params.gamma * (1.0 - params.branch_u)) * _ketbra(G0, E0))
        self.jumps = jumps

        l0 = -1j * (_vec_left(h_static) - _vec_right(h_static))
        for L in jumps:
            ldl = L.conj().T @ L
            l0 += np.kron(L, L.conj())
            l0 -= 0.5 * (_vec_left(ldl) + _vec_right(ldl))
        self.l0 = l0
        self.l1 = -1j * (_vec_left(h_drive) - _vec_right(h_drive))

    def hamiltonian(self, t_ns: float) -> np.ndarray:
        return self.h_static + self.pulse.omega(t_ns) * self.h_drive

    def rhs(self, t_ns: float, rho: np.ndarray) -> np.ndarray:
        """Master-equation right-hand side (matrix in, matrix out)."""
        vec = (self.l0 + self.pulse.omega(t_ns) * self.l1) @ rho.reshape(-1)
        return vec.reshape(4, 4)


def _ketbra(i: int, j: int) -> np.ndarray:
    m = np.zeros((4, 4), dtype=np.complex128)
    m[i, j] = 1.0
    return m


def build_model(params: QedParams, pulse: PulseShape) -> QedModel:
    return QedModel(params, pulse)


@dataclass(frozen=True)
class Trajectory:
    """Sampled populations and cavity-emission flux of one integration.

    populations[k] = (rho_uu, rho_ee, rho_g1, rho_g0) at t_ns[k];
    flux[k] = 2*kappa*rho_g1 in photons/ns.
    """

    t_ns: np.ndarray
    populations: np.ndarray
    flux: np.ndarray
    kappa: float
    gamma: float
    branch_u: float

    def to_csv(self, dest: str | Path | None = None) -> str:
        lines = [TRAJECTORY_CSV_HEADER]
        for k in range(self.t_ns.size):
            p = self.populations[k]
            lines.append(f"{self.t_ns[k]:.6g},{p[0]:.12g},{p[1]:.12g},"
                         f"{p[2]:.12g},{p[3]:.12g},{self.flux[k]:.12g}")
        text = "\n".join(lines) + "\n"
        if dest is not None:
            Path(dest).write_text(text)
        return text

    def free_space_emission_to_g(self) -> float:
        """Cumulative spontaneous-emission probability into |g,0>."""
        rate = 2.0 * self.gamma * (1.0 - self.branch_u) * self.populations[:, E0]
        return float(np.trapezoid(rate, self.t_ns))


def propagate(model: QedModel, rho0: np.ndarray, dt: float, t_total: float,
              *, trace_tol: float = 1e-6) -> Trajectory:
    """Fixed-step classic RK4 integration of the master equation.

    dt must divide t_total.  Raises IntegrationError if the trace drifts
    by more than trace_tol at any sampled step.
    """
    steps_f = t_total / dt
    steps = int(round(steps_f))
    if abs(steps_f - steps) > 1e-9 or steps < 1:
        raise ValueError("dt must divide t_total")
    validate_density(np.asarray(rho0, dtype=np.complex128))

    t_half = np.arange(2 * steps + 1) * (0.5 * dt)
    omega = np.asarray(model.pulse.omega(t_half), dtype=np.float64)
    diag, y_final = kernels.rk4_propagate(
        model.l0, model.l1, np.asarray(rho0, dtype=np.complex128).reshape(-1),
        omega, float(dt), steps)

    drift = np.max(np.abs(diag.sum(axis=1) - 1.0))
    if not np.isfinite(drift) or drift > trace_tol:
        raise IntegrationError(f"trace drift {drift:.3e} exceeds {trace_tol:.1e}")
    rho_final = y_final.reshape(4, 4)
    validate_density(rho_final, trace_tol=max(1e-9, trace_tol))

    kappa = model.params.kappa
    t = np.arange(steps + 1) * dt
    flux = 2.0 * kappa * diag[:, G1]
    return Trajectory(t_ns=t, populations=diag, flux=flux,
                      kappa=kappa, gamma=model.params.gamma,
                      branch_u=model.params.branch_u)


def emission_probability(traj: Trajectory) -> float:
    """Photon-emission probability 2*kappa * integral of rho_g1 dt
    (trapezoid rule over the trajectory grid)."""
    p = float(np.trapezoid(traj.flux, traj.t_ns))
    return min(max(p, 0.0), 1.0)


def _emission_at_scale(params: QedParams, pulse: PulseShape, scale: float,
                       dt: float) -> float:
    model = build_model(
        QedParams(**{**_params_dict(params), "coupling_scale": scale}), pulse)
    traj = propagate(model, pure_state_density(U0), dt, pulse.duration_ns)
    return emission_probability(traj)


def _params_dict(params: QedParams) -> dict:
    return {
        "g_mhz": params.g_mhz, "kappa_mhz": params.kappa_mhz,
        "gamma_mhz": params.gamma_mhz,
        "delta_trigger_mhz": params.delta_trigger_mhz,
        "delta_cavity_mhz": params.delta_cavity_mhz,
        "stark_shift_mhz": params.stark_shift_mhz,
        "branch_u": params.branch_u, "coupling_scale": params.coupling_scale,
    }


def fit_coupling_scale(params: QedParams, pulse: PulseShape, target: float,
                       *, dt: float = 1.0, tol: float = 1e-3,
                       max_iter: int = 60) -> float:
    """Bisect the coupling-reduction factor until the emission
    probability matches `target` within `tol`.

    Emission is monotone increasing in the scale over (0, 1], so plain
    bisection on [0, 1] converges; target must lie strictly between 0
    and the full-coupling emission probability.
    """
    p_full = _emission_at_scale(params, pulse, 1.0, dt)
    if not 0.0 < target <= p_full:
        raise ValueError(
            f"target {target} outside reachable range (0, {p_full:.4f}]")
    if abs(p_full - target) < tol:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p = _emission_at_scale(params, pulse, mid, dt)
        if abs(p - target) < tol:
            return mid
        if p < target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("bisection did not converge")
