"""Time-evolution engines and the decoherence-rate model.

Unitary propagation uses a fixed-step fourth-order commutator-free Magnus
integrator (two matrix exponentials per step), which keeps propagators
unitary to machine precision at any step size; accuracy is controlled by
the step and checked with a step-halving guard. Open-system propagation
integrates the Lindblad master equation directly on the density matrix
with classical RK4 (trace is a linear invariant, so it is preserved
exactly up to roundoff).

Long-horizon driven-dissipative experiments (heating, dressed coherence)
run in the Floquet mode frame with the dissipator averaged over one drive
period; the averaging error is O(Gamma * T_drive) ~ 1e-8 for the devices
simulated here.

Units: time in ns, Hamiltonians in rad/ns, coherence times in us,
rates in 1/us (converted to 1/ns internally).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import curve_fit

__all__ = [
    "CoherenceParams",
    "NoiseRates",
    "EvolutionResult",
    "HamiltonianModel",
    "IntegratorError",
    "noise_rates",
    "propagator",
    "propagator_checkpoints",
    "evolve_schrodinger",
    "evolve_lindblad",
    "bare_jump_operators",
    "embed_operator",
    "project_jumps_floquet",
    "PeriodicJump",
    "averaged_liouvillian",
    "propagate_superop",
    "heating_scan",
    "dressed_coherence",
]

US_TO_NS = 1e3

# CF4 Gauss-Legendre nodes and exponent weights
_GAUSS_LO = 0.5 - np.sqrt(3.0) / 6.0
_GAUSS_HI = 0.5 + np.sqrt(3.0) / 6.0
_W_SMALL = (3.0 - 2.0 * np.sqrt(3.0)) / 12.0
_W_BIG = (3.0 + 2.0 * np.sqrt(3.0)) / 12.0


class IntegratorError(RuntimeError):
    """Raised when an evolution fails its accuracy contract."""


@dataclass(frozen=True)
class CoherenceParams:
    """Relaxation/echo-dephasing times (us) and equilibrium excitation ratio."""

    t1: float
    t2e: float
    nu: float = 0.0

    def __post_init__(self):
        if self.t1 <= 0 or self.t2e <= 0:
            raise ValueError("coherence times must be positive")
        if self.t2e > 2.0 * self.t1 + 1e-12:
            raise ValueError(f"unphysical input: t2e={self.t2e} > 2*t1={2*self.t1}")
        if self.nu < 0:
            raise ValueError("nu must be >= 0")


@dataclass(frozen=True)
class NoiseRates:
    """Relaxation, excitation and pure-dephasing rates in 1/us."""

    gamma_down: float
    gamma_up: float
    gamma_phi: float

    def __post_init__(self):
        if min(self.gamma_down, self.gamma_up, self.gamma_phi) < -1e-15:
            raise ValueError("rates must be non-negative")


def noise_rates(c: CoherenceParams) -> NoiseRates:
    """Split (T1, T2E, nu) into (Gamma_down, Gamma_up, Gamma_phi).

    Gamma_down = (1/T1)/(1+nu), Gamma_up = 1/T1 - Gamma_down and
    Gamma_phi = 1/T2E - 1/(2 T1), all in 1/us.
    """
    g1 = 1.0 / c.t1
    g_down = g1 / (1.0 + c.nu)
    g_up = g1 - g_down
    g_phi = 1.0 / c.t2e - 0.5 * g1
    if g_phi < 0:  # t2e <= 2 t1 is enforced upstream; clip roundoff only
        g_phi = max(g_phi, 0.0) if g_phi > -1e-12 else g_phi
    return NoiseRates(g_down, g_up, g_phi)


@dataclass
class EvolutionResult:
    """Trajectory of an evolution: times (ns), states, bare-basis populations."""

    times: np.ndarray
    states: list
    populations: np.ndarray

    def validate(self, tol: float = 1e-8) -> "EvolutionResult":
        sums = self.populations.sum(axis=1)
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > tol:
            raise ValueError(f"populations deviate from unit sum by {worst:.3e}")
        return self

    def final_state(self):
        return self.states[-1]


@dataclass
class HamiltonianModel:
    """H(t) = static + sum_k f_k(t) M_k + conj(f_k(t)) M_k^dagger.

    ``static`` is Hermitian; each term is a constant matrix with a scalar
    coefficient function (vectorized over time arrays). ``suggested_step``
    is the integrator step (ns) that resolves the fastest coefficient.
    """

    dim: int
    static: np.ndarray
    terms: list[tuple[np.ndarray, Callable]]
    suggested_step: float = 0.02

    def matrix(self, t: float) -> np.ndarray:
        h = np.array(self.static, dtype=complex)
        for m, f in self.terms:
            c = complex(f(t))
            h += c * m + np.conj(c) * m.conj().T
        return h

    def coefficients(self, ts: np.ndarray) -> np.ndarray:
        """Coefficient matrix of shape (len(ts), n_terms)."""
        ts = np.asarray(ts, dtype=float)
        if not self.terms:
            return np.zeros((ts.size, 0), dtype=complex)
        cols = []
        for _, f in self.terms:
            c = np.asarray(f(ts), dtype=complex)
            cols.append(np.broadcast_to(c, ts.shape))
        return np.stack(cols, axis=1)

    @staticmethod
    def static_only(h: np.ndarray, suggested_step: float = 0.02) -> "HamiltonianModel":
        h = np.asarray(h, dtype=complex)
        return HamiltonianModel(h.shape[0], h, [], suggested_step)


def _as_model(h) -> HamiltonianModel:
    if isinstance(h, HamiltonianModel):
        return h
    if isinstance(h, np.ndarray):
        return HamiltonianModel.static_only(h)
    raise TypeError(f"cannot interpret {type(h)} as a Hamiltonian")


def _expm_factor(h: np.ndarray, scale: float) -> np.ndarray:
    """exp(-1j * scale * h) for Hermitian h via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * scale * w)) @ v.conj().T


def _cf4_segment(model: HamiltonianModel, t0: float, t1: float, max_step: float,
                 u: np.ndarray) -> np.ndarray:
    """Advance the propagator u from t0 to t1 with CF4 steps <= max_step."""
    span = t1 - t0
    if span <= 0:
        return u
    n = max(1, int(np.ceil(span / max_step)))
    h = span / n
    starts = t0 + h * np.arange(n)
    nodes = np.concatenate([starts + _GAUSS_LO * h, starts + _GAUSS_HI * h])
    coeff = model.coefficients(nodes)  # (2n, K)
    mats = [m for m, _ in model.terms]
    for k in range(n):
        ha = np.array(model.static, dtype=complex)
        hb = np.array(model.static, dtype=complex)
        for j, m in enumerate(mats):
            ca, cb = coeff[k, j], coeff[n + k, j]
            ha += ca * m + np.conj(ca) * m.conj().T
            hb += cb * m + np.conj(cb) * m.conj().T
        right = _expm_factor(_W_BIG * ha + _W_SMALL * hb, h)
        left = _expm_factor(_W_SMALL * ha + _W_BIG * hb, h)
        u = left @ (right @ u)
    return u


def propagator(h, t0: float, t1: float, max_step: float | None = None,
               unitarity_tol: float = 1e-9) -> np.ndarray:
    """Time-ordered propagator U(t1, t0) of a (time-dependent) Hamiltonian."""
    model = _as_model(h)
    step = model.suggested_step if max_step is None else max_step
    u = _cf4_segment(model, t0, t1, step, np.eye(model.dim, dtype=complex))
    defect = np.max(np.abs(u.conj().T @ u - np.eye(model.dim)))
    if defect > unitarity_tol:
        raise IntegratorError(f"propagator unitarity defect {defect:.3e} > {unitarity_tol}")
    return u


def propagator_checkpoints(h, times: Sequence[float], max_step: float | None = None) -> list[np.ndarray]:
    """Propagators U(t_k, times[0]) for a sorted checkpoint grid."""
    model = _as_model(h)
    step = model.suggested_step if max_step is None else max_step
    times = np.asarray(times, dtype=float)
    u = np.eye(model.dim, dtype=complex)
    out = [u.copy()]
    for a, b in zip(times[:-1], times[1:]):
        u = _cf4_segment(model, a, b, step, u)
        out.append(u.copy())
    return out


def evolve_schrodinger(h, psi0, grid: Sequence[float], max_step: float | None = None,
                       tol: float = 1e-9) -> EvolutionResult:
    """Propagate a pure state along ``grid`` (ns).

    The integrator is exactly norm-preserving; ``tol`` bounds the allowed
    unitarity/norm defect and raises :class:`IntegratorError` beyond it.
    """
    from .qcore import StateVector

    if isinstance(psi0, StateVector):
        psi = np.array(psi0.amplitudes, dtype=complex)
        dims = psi0.dims
    else:
        psi = np.array(psi0, dtype=complex).ravel()
        dims = (psi.size,)
    model = _as_model(h)
    step = model.suggested_step if max_step is None else max_step
    grid = np.asarray(grid, dtype=float)
    states = [psi.copy()]
    for a, b in zip(grid[:-1], grid[1:]):
        u = _cf4_segment(model, a, b, step, np.eye(model.dim, dtype=complex))
        psi = u @ psi
        states.append(psi.copy())
    norms = np.array([np.linalg.norm(s) for s in states])
    if np.max(np.abs(norms**2 - 1.0)) > max(tol, 1e-9) * max(1.0, grid[-1] - grid[0]):
        raise IntegratorError("norm drift exceeded tolerance")
    pops = np.array([np.abs(s) ** 2 for s in states])
    svs = [StateVector(s, dims) for s in states]
    return EvolutionResult(grid, svs, pops)


def _jump_matrix(jump, t: float) -> np.ndarray:
    if isinstance(jump, np.ndarray):
        return jump
    return jump.matrix(t) if hasattr(jump, "matrix") else jump(t)


def _lindblad_rhs(hmat: np.ndarray, rho: np.ndarray, jumps_t: list[np.ndarray]) -> np.ndarray:
    out = -1j * (hmat @ rho - rho @ hmat)
    for L in jumps_t:
        Ld = L.conj().T
        LdL = Ld @ L
        out += L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def evolve_lindblad(h, rho0, jumps: Sequence, grid: Sequence[float],
                    max_step: float | None = None, trace_tol: float = 1e-7,
                    positivity_tol: float = 1e-8) -> EvolutionResult:
    """Integrate the Lindblad master equation on the density matrix.

    ``jumps`` may mix constant matrices and time-dependent jump objects
    (anything exposing ``matrix(t)`` or callable as ``jump(t)``).
    """
    from .qcore import DensityMatrix

    if isinstance(rho0, DensityMatrix):
        rho = np.array(rho0.entries, dtype=complex)
        dims = rho0.dims
    else:
        rho = np.array(rho0, dtype=complex)
        dims = (rho.shape[0],)
    model = _as_model(h)
    step = model.suggested_step if max_step is None else max_step
    grid = np.asarray(grid, dtype=float)
    static_jumps = [j for j in jumps if isinstance(j, np.ndarray)]
    dyn_jumps = [j for j in jumps if not isinstance(j, np.ndarray)]

    states = [rho.copy()]
    mats = [m for m, _ in model.terms]

    def hamiltonian_at(coeff_row):
        hm = np.array(model.static, dtype=complex)
        for j, m in enumerate(mats):
            c = coeff_row[j]
            hm += c * m + np.conj(c) * m.conj().T
        return hm

    for a, b in zip(grid[:-1], grid[1:]):
        span = b - a
        if span <= 0:
            states.append(rho.copy())
            continue
        n = max(1, int(np.ceil(span / step)))
        hstep = span / n
        # coefficients on the half-step lattice t0, t0+h/2, t0+h, ...
        lattice = a + 0.5 * hstep * np.arange(2 * n + 1)
        coeff = model.coefficients(lattice)
        for k in range(n):
            t = a + k * hstep
            h0 = hamiltonian_at(coeff[2 * k])
            h_half = hamiltonian_at(coeff[2 * k + 1])
            h1 = hamiltonian_at(coeff[2 * k + 2])
            j0 = static_jumps + [_jump_matrix(j, t) for j in dyn_jumps]
            j_half = static_jumps + [_jump_matrix(j, t + 0.5 * hstep) for j in dyn_jumps]
            j1 = static_jumps + [_jump_matrix(j, t + hstep) for j in dyn_jumps]
            k1 = _lindblad_rhs(h0, rho, j0)
            k2 = _lindblad_rhs(h_half, rho + 0.5 * hstep * k1, j_half)
            k3 = _lindblad_rhs(h_half, rho + 0.5 * hstep * k2, j_half)
            k4 = _lindblad_rhs(h1, rho + hstep * k3, j1)
            rho = rho + (hstep / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        states.append(rho.copy())

    traces = np.array([np.real(np.trace(s)) for s in states])
    drift = float(np.max(np.abs(traces - traces[0])))
    if drift > trace_tol:
        raise IntegratorError(f"trace drift {drift:.3e} exceeds {trace_tol}")
    w_min = np.linalg.eigvalsh((states[-1] + states[-1].conj().T) / 2).min()
    if w_min < -max(positivity_tol, 1e-6):
        warnings.warn(f"final state eigenvalue {w_min:.3e} below zero", RuntimeWarning)
    pops = np.array([np.real(np.diag(s)) for s in states])
    dms = [DensityMatrix(s / np.trace(s) if abs(np.trace(s)) > 0 else s, dims) for s in states]
    return EvolutionResult(grid, dms, pops)


# ---------------------------------------------------------------------------
# jump operators


def _ladder(levels: int) -> np.ndarray:
    a = np.zeros((levels, levels), dtype=complex)
    for n in range(1, levels):
        a[n - 1, n] = np.sqrt(n)
    return a


def bare_jump_operators(rates: NoiseRates, levels: int = 2) -> list[np.ndarray]:
    """Jump operators (1/sqrt(ns) units) for one transmon subsystem.

    Two levels: ``sqrt(G_down)|0><1|``, ``sqrt(G_up)|1><0|`` and
    ``sqrt(G_phi/2) sigma_z``. Three levels generalize with ladder
    matrix elements: ``sqrt(G_down) a``, ``sqrt(G_up) a^dag`` and
    ``sqrt(G_phi/2) (I - 2 a^dag a)``.
    """
    a = _ladder(levels)
    n_op = a.conj().T @ a
    sz_gen = np.eye(levels) - 2.0 * n_op  # diag(1, -1, -3, ...)
    out = []
    if rates.gamma_down > 0:
        out.append(np.sqrt(rates.gamma_down / US_TO_NS) * a)
    if rates.gamma_up > 0:
        out.append(np.sqrt(rates.gamma_up / US_TO_NS) * a.conj().T)
    if rates.gamma_phi > 0:
        out.append(np.sqrt(0.5 * rates.gamma_phi / US_TO_NS) * sz_gen)
    return out


def embed_operator(op: np.ndarray, index: int, dims: Sequence[int]) -> np.ndarray:
    """Embed a single-subsystem operator at ``index`` into the register."""
    from .qcore import tensor

    ops = [np.eye(d, dtype=complex) for d in dims]
    if op.shape != (dims[index], dims[index]):
        raise ValueError(f"operator shape {op.shape} does not fit subsystem {index}")
    ops[index] = op
    return tensor(ops)


# ---------------------------------------------------------------------------
# Floquet-frame dissipation


class PeriodicJump:
    """Jump operator sampled on one period and linearly interpolated."""

    def __init__(self, samples: np.ndarray, times: np.ndarray, period: float):
        self.samples = np.asarray(samples, dtype=complex)
        self.times = np.asarray(times, dtype=float)
        self.period = float(period)

    def matrix(self, t: float) -> np.ndarray:
        tau = float(t) % self.period
        idx = np.searchsorted(self.times, tau, side="right") - 1
        idx = min(max(idx, 0), len(self.times) - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = 0.0 if t1 == t0 else (tau - t0) / (t1 - t0)
        return (1.0 - w) * self.samples[idx] + w * self.samples[idx + 1]


def project_jumps_floquet(jumps: Sequence[np.ndarray], sol) -> list[PeriodicJump]:
    """Express static jump operators in the instantaneous Floquet mode frame.

    ``sol`` is a FloquetSolution; the returned operators have elements
    ``<u_m(t)| L |u_n(t)>`` sampled on the solution's time grid. The basis
    change is unitary at every sample, so Hilbert-Schmidt norms are
    preserved.
    """
    modes = sol.mode_columns()  # (n_t, dim, n_modes)
    out = []
    for L in jumps:
        if L.shape != (modes.shape[1], modes.shape[1]):
            raise ValueError(f"jump shape {L.shape} does not match modes dim {modes.shape[1]}")
        samples = np.einsum("tim,ij,tjn->tmn", modes.conj(), L, modes)
        out.append(PeriodicJump(samples, sol.times, sol.period))
    return out


def _superop(h: np.ndarray | None, jump_samples: list[np.ndarray]) -> np.ndarray:
    d = jump_samples[0].shape[0] if jump_samples else h.shape[0]
    eye = np.eye(d)
    s = np.zeros((d * d, d * d), dtype=complex)
    if h is not None:
        s += -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for L in jump_samples:
        LdL = L.conj().T @ L
        s += np.kron(L, L.conj()) - 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
    return s


def averaged_liouvillian(h_static: np.ndarray, jumps: Sequence, period: float,
                         n_samples: int = 256) -> np.ndarray:
    """Liouvillian with the dissipator averaged over one drive period.

    Valid for horizons where Gamma * period << 1; the coherent part
    ``h_static`` (rad/ns) is kept exactly.
    """
    d = h_static.shape[0]
    ts = np.linspace(0.0, period, n_samples, endpoint=False)
    s = np.zeros((d * d, d * d), dtype=complex)
    static = [j for j in jumps if isinstance(j, np.ndarray)]
    dyn = [j for j in jumps if not isinstance(j, np.ndarray)]
    if static:
        s += _superop(None, list(static))
    if dyn:
        acc = np.zeros_like(s)
        for t in ts:
            acc += _superop(None, [_jump_matrix(j, t) for j in dyn])
        s += acc / len(ts)
    s += _superop(h_static, [])
    return s


def propagate_superop(liouvillian: np.ndarray, rho0: np.ndarray, t_ns: float) -> np.ndarray:
    """rho(t) = expm(L t) rho(0) for a time-independent Liouvillian."""
    d = rho0.shape[0]
    vec = rho0.reshape(-1)
    out = scipy.linalg.expm(liouvillian * t_ns) @ vec
    return out.reshape(d, d)


# ---------------------------------------------------------------------------
# long-horizon driven-dissipative experiments


def _floquet_solution_for_drive(device, drive, n_grid: int = 256):
    """Lab-frame Floquet solution of one driven qubit at the plateau amplitude.

    Two-level qubits use the analytic modes; multi-level qubits solve the
    one-period propagator in the carrier rotating frame (RWA) and map the
    modes back to the lab frame, which leaves quasienergies unchanged.
    """
    from . import device as dev
    from . import floquet as flq

    qubit = dev.get_qubit(device, drive.target)
    omega_d = 2 * np.pi * dev.drive_frequency(device, drive)
    if qubit.levels == 2:
        d2 = flq.TwoLevelDrive(
            a=2 * np.pi * drive.amplitude * 1e-3,
            delta=2 * np.pi * drive.detuning * 1e-3,
            omega_d=omega_d,
            phi=drive.phase,
        )
        return flq.two_level_solution(d2, n_grid=n_grid)
    sub = dev.DeviceSpec(qubits=[qubit], couplings=[], noise=None)
    plateau = replace(drive, envelope=None)
    model = dev.hamiltonian_terms(sub, [plateau], frame="rotating", rwa=True)
    period = 2 * np.pi / omega_d
    sol = flq.solve_propagator(model, period, n_grid=n_grid)
    frame_phase = np.exp(-1j * omega_d * np.outer(sol.times, np.arange(qubit.levels)))
    modes_lab = frame_phase[:, :, None] * sol.modes
    return replace(sol, modes=modes_lab)


def _adiabaticity_defect(device, drive, ramp_check_step: float = 0.01) -> float:
    """Residual non-adiabatic excitation after a single ramp-up."""
    from . import device as dev

    qubit = dev.get_qubit(device, drive.target)
    sub = dev.DeviceSpec(qubits=[qubit], couplings=[], noise=None)
    env = drive.envelope
    if env is None or env.ramp == 0:
        return 0.0
    model = dev.hamiltonian_terms(sub, [drive], frame="rotating", rwa=True)
    u = propagator(model, 0.0, env.ramp, max_step=ramp_check_step)
    omega_d = 2 * np.pi * dev.drive_frequency(device, drive)
    psi_lab = np.exp(-1j * omega_d * env.ramp * np.arange(qubit.levels)) * u[:, 0]
    sol = _floquet_solution_for_drive(device, drive)
    modes_at_ramp = sol.mode_at(env.ramp)
    ovl = np.abs(modes_at_ramp[:, sol.index_map[0]].conj() @ psi_lab) ** 2
    return float(1.0 - ovl)


def heating_scan(device, drive_template, amplitudes: Sequence[float],
                 horizon_us: float = 355.0, adiabatic_threshold: float = 5e-2):
    """Bare excited-state population after a long drive, per amplitude.

    Starts from the ground state, maps the static jump operators onto the
    Floquet basis of the driven qubit and evolves with the period-averaged
    Lindblad generator. Non-adiabatic amplitudes (ramp leakage above
    ``adiabatic_threshold``) are excluded and flagged with NaN.
    """
    from . import device as dev

    qubit = dev.get_qubit(device, drive_template.target)
    coh = dev.get_noise(device, drive_template.target)
    if coh is None:
        raise ValueError(f"no coherence parameters for qubit {drive_template.target}")
    rates = noise_rates(coh)
    jumps_bare = bare_jump_operators(rates, qubit.levels)
    horizon_ns = horizon_us * US_TO_NS

    pops = np.full(len(amplitudes), np.nan)
    flags = []
    for i, amp in enumerate(amplitudes):
        if amp < 0:
            raise ValueError("amplitude must be >= 0")
        if amp == 0.0:
            lio = _superop(np.zeros((qubit.levels,) * 2), jumps_bare)
            rho0 = np.zeros((qubit.levels, qubit.levels), dtype=complex)
            rho0[0, 0] = 1.0
            rho = propagate_superop(lio, rho0, horizon_ns)
            pops[i] = np.real(rho[1, 1])
            flags.append("ok")
            continue
        drive = replace(drive_template, amplitude=float(amp))
        defect = _adiabaticity_defect(device, drive)
        if defect > adiabatic_threshold:
            flags.append(f"nonadiabatic({defect:.2e})")
            continue
        sol = _floquet_solution_for_drive(device, drive)
        jumps_f = project_jumps_floquet(jumps_bare, sol)
        h_f = np.diag(sol.quasienergies.astype(complex))
        lio = averaged_liouvillian(h_f, jumps_f, sol.period, n_samples=len(sol.times))
        rho0 = np.zeros_like(h_f)
        rho0[sol.index_map[0], sol.index_map[0]] = 1.0
        rho = propagate_superop(lio, rho0, horizon_ns)
        pops[i] = np.real(rho[sol.index_map[1], sol.index_map[1]])
        flags.append("ok")
    return pops, flags


def _fit_exponential(ts_us: np.ndarray, ys: np.ndarray) -> float:
    """Decay constant (us) of a + b exp(-t/T) data."""
    b0 = ys[0] - ys[-1]
    a0 = ys[-1]
    t0 = max(ts_us[-1] / 3.0, 1e-3)

    def f(t, a, b, tau):
        return a + b * np.exp(-t / tau)

    try:
        popt, _ = curve_fit(f, ts_us, ys, p0=[a0, b0, t0],
                            maxfev=20000, bounds=([-1, -2, 1e-4], [2, 2, 1e6]))
    except RuntimeError as exc:
        raise ValueError(f"decay fit failed: {exc}") from exc
    return float(popt[2])


def dressed_coherence(device, drive, kind: str, n_points: int = 24,
                      max_idle_us: float | None = None) -> float:
    """Decay constant (us) of the driven qubit under the projected-noise model.

    ``kind='t1'``: prepare the bare excited state, idle under the drive,
    reverse-map, fit the excited population decay. ``kind='t2e'``: prepare
    a superposition, idle in two equal drive segments with a bare
    refocusing pi pulse (orthogonal in phase to the pi/2 projections)
    between them, fit the echo envelope.
    """
    from . import device as dev

    if kind not in ("t1", "t2e"):
        raise ValueError(f"unknown kind {kind!r}")
    qubit = dev.get_qubit(device, drive.target)
    coh = dev.get_noise(device, drive.target)
    if coh is None:
        raise ValueError(f"no coherence parameters for qubit {drive.target}")
    rates = noise_rates(coh)
    jumps_bare = bare_jump_operators(rates, qubit.levels)
    dims = qubit.levels

    if drive.amplitude == 0.0:
        lio = _superop(np.zeros((dims, dims)), jumps_bare)
        i0, i1 = 0, 1
    else:
        sol = _floquet_solution_for_drive(device, drive)
        jumps_f = project_jumps_floquet(jumps_bare, sol)
        h_f = np.diag(sol.quasienergies.astype(complex))
        lio = averaged_liouvillian(h_f, jumps_f, sol.period, n_samples=len(sol.times))
        i0, i1 = sol.index_map[0], sol.index_map[1]

    ref = coh.t1 if kind == "t1" else coh.t2e
    span_us = 2.0 * ref if max_idle_us is None else max_idle_us
    ts_us = np.linspace(0.0, span_us, n_points)

    # bare gates act on the adiabatically connected mode indices
    sx = np.zeros((dims, dims), dtype=complex)
    sx[i0, i1] = sx[i1, i0] = 1.0
    sy = np.zeros((dims, dims), dtype=complex)
    sy[i0, i1] = -1j
    sy[i1, i0] = 1j

    def rot(axis, angle):
        return scipy.linalg.expm(-0.5j * angle * axis)

    ys = np.empty(n_points)
    if kind == "t1":
        rho0 = np.zeros((dims, dims), dtype=complex)
        rho0[i1, i1] = 1.0
        for k, t in enumerate(ts_us):
            rho = propagate_superop(lio, rho0, t * US_TO_NS)
            ys[k] = np.real(rho[i1, i1])
        return _fit_exponential(ts_us, ys)

    x90 = rot(sx, np.pi / 2)
    y180 = rot(sy, np.pi)
    rho_init = np.zeros((dims, dims), dtype=complex)
    rho_init[i0, i0] = 1.0
    rho0 = x90 @ rho_init @ x90.conj().T
    for k, t in enumerate(ts_us):
        half = 0.5 * t * US_TO_NS
        rho = propagate_superop(lio, rho0, half)
        rho = y180 @ rho @ y180.conj().T
        rho = propagate_superop(lio, rho, half)
        rho = x90 @ rho @ x90.conj().T
        ys[k] = np.real(rho[i1, i1])
    # echo contrast decays from 1; fold into a + b exp(-t/T)
    return _fit_exponential(ts_us, ys)
