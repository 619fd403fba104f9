"""Chip and microwave-drive model.

Transmon level structures, static couplings, cosine-ramp pulse envelopes
with a derivative (DRAG) quadrature, and assembly of the time-dependent
Hamiltonian for the driven register.

Unit conventions
----------------
Configuration values are ordinary frequencies (GHz for transitions, MHz
for drive amplitudes/detunings and couplings) and times are ns. All
Hamiltonians are angular (rad/ns). A drive's ``amplitude`` is the
on-resonant Rabi frequency of the addressed transition, quoted as A/2pi
in MHz.

Sign conventions
----------------
The bare two-level term is ``-omega_q/2 sigma_z`` with ``sigma_z|0> = +|0>``.
A drive contributes ``A(t) cos(w_d t + phi) X + A_Q(t) sin(w_d t + phi) X``
on the charge operator ``X`` (matrix elements sqrt(n+1)), where the
quadrature Rabi amplitude is ``A_Q = (2 pi ns) * drag * dA/dt``. The 2 pi
scale makes the dimensionless drag coefficient order-unity at the
counterdiabatic optimum ``drag = -1/(2 pi |delta| ns)`` of a detuned ramp
(about -0.6 for a 40 MHz detuning), matching the coefficient magnitudes
this kind of hardware quotes. Three-level subsystems use the diagonal
ladder with anharmonicity and excitation-conserving hopping couplings
``J (a^dag b + a b^dag)``.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field, replace

from .dynamics import CoherenceParams, HamiltonianModel
from .qcore import tensor

__all__ = [
    "TransmonParams",
    "Coupling",
    "PulseEnvelope",
    "DriveSpec",
    "DeviceSpec",
    "envelope_eval",
    "transmon_from_energies",
    "drive_frequency",
    "build_hamiltonian",
    "hamiltonian_terms",
    "get_qubit",
    "get_noise",
    "charge_operator",
    "number_operator",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TransmonParams:
    """Fixed-frequency transmon: 0-1 frequency (GHz), anharmonicity (GHz, < 0)."""

    name: str
    f01: float
    anharmonicity: float
    levels: int = 2

    def __post_init__(self):
        if self.f01 <= 0:
            raise ValueError(f"{self.name}: f01 must be positive")
        if self.anharmonicity >= 0:
            raise ValueError(f"{self.name}: anharmonicity must be negative")
        if self.levels not in (2, 3):
            raise ValueError(f"{self.name}: levels must be 2 or 3")

    def level_energies(self) -> np.ndarray:
        """Level energies in GHz: E0=0, E1=f01, E2=2 f01 + anharmonicity."""
        e = [0.0, self.f01, 2.0 * self.f01 + self.anharmonicity]
        return np.array(e[: self.levels])

    def transition_frequency(self, transition: str) -> float:
        """Frequency (GHz) of the ``"01"`` or ``"12"`` transition."""
        if transition == "01":
            return self.f01
        if transition == "12":
            if self.levels < 3:
                raise ValueError(f"{self.name}: 1-2 transition requires a 3-level model")
            return self.f01 + self.anharmonicity
        raise ValueError(f"unknown transition {transition!r}")


@dataclass(frozen=True)
class Coupling:
    """Static transverse coupling between two qubits, J/2pi in MHz."""

    pair: tuple[str, str]
    j_mhz: float

    def __post_init__(self):
        if self.pair[0] == self.pair[1]:
            raise ValueError(f"self-coupling on {self.pair[0]}")


@dataclass(frozen=True)
class PulseEnvelope:
    """Cosine-ramp envelope: ramp and total duration in ns, DRAG coefficient.

    The in-phase component rises as ``(1 - cos(pi t / ramp)) / 2``, holds at
    1 and ramps down symmetrically; the quadrature component is
    ``drag * d(in-phase)/dt`` in 1/ns.
    """

    ramp: float
    duration: float
    drag: float = 0.0

    def __post_init__(self):
        if self.ramp < 0 or self.duration <= 0:
            raise ValueError("ramp must be >= 0 and duration > 0")
        if 2.0 * self.ramp > self.duration + 1e-12:
            raise ValueError(f"2*ramp={2*self.ramp} exceeds duration={self.duration}")


def envelope_eval(env: PulseEnvelope, t) -> tuple:
    """In-phase (dimensionless) and quadrature (1/ns) envelope at time t (ns).

    Vectorized over ``t``; raises for samples outside [0, duration].
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-12) or np.any(t_arr > env.duration + 1e-12):
        raise ValueError(f"t outside [0, {env.duration}] ns")
    i_part = np.ones_like(t_arr)
    q_part = np.zeros_like(t_arr)
    if env.ramp > 0:
        up = t_arr < env.ramp
        down = t_arr > env.duration - env.ramp
        i_part = np.where(up, 0.5 * (1.0 - np.cos(np.pi * t_arr / env.ramp)), i_part)
        i_part = np.where(down, 0.5 * (1.0 - np.cos(np.pi * (env.duration - t_arr) / env.ramp)), i_part)
        slope = 0.5 * np.pi / env.ramp
        q_part = np.where(up, env.drag * slope * np.sin(np.pi * t_arr / env.ramp), q_part)
        q_part = np.where(down, -env.drag * slope * np.sin(np.pi * (env.duration - t_arr) / env.ramp), q_part)
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(i_part), float(q_part)
    return i_part, q_part


@dataclass(frozen=True)
class DriveSpec:
    """One periodic microwave drive applied to a single qubit.

    ``amplitude`` is the on-resonant Rabi frequency of the addressed
    transition (A/2pi, MHz); ``detuning`` is drive frequency minus
    transition frequency (MHz). ``envelope=None`` means an always-on
    constant-amplitude tone; ``t_start`` shifts the envelope window.
    """

    target: str
    amplitude: float
    detuning: float
    phase: float = 0.0
    transition: str = "01"
    envelope: PulseEnvelope | None = None
    t_start: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.transition not in ("01", "12"):
            raise ValueError(f"unknown transition {self.transition!r}")


@dataclass(frozen=True)
class DeviceSpec:
    """Qubits, static couplings and optional per-qubit coherence parameters."""

    qubits: tuple
    couplings: tuple = ()
    noise: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        names = [q.name for q in self.qubits]
        if len(set(names)) != len(names):
            raise ValueError("duplicate qubit names")
        for c in self.couplings:
            for name in c.pair:
                if name not in names:
                    raise ValueError(f"coupling references unknown qubit {name!r}")
        if self.noise:
            for name in self.noise:
                if name not in names:
                    raise ValueError(f"noise entry references unknown qubit {name!r}")

    @property
    def names(self) -> list[str]:
        return [q.name for q in self.qubits]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(q.levels for q in self.qubits)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown qubit {name!r}") from None


def get_qubit(device: DeviceSpec, name: str) -> TransmonParams:
    return device.qubits[device.index(name)]


def get_noise(device: DeviceSpec, name: str) -> CoherenceParams | None:
    if not device.noise:
        return None
    return device.noise.get(name)


def transmon_from_energies(ej: float, ec: float, name: str = "q",
                           levels: int = 2) -> TransmonParams:
    """Transmon parameters from Josephson and charging energies (GHz).

    ``f01 = sqrt(8 EJ EC) - EC`` and ``anharmonicity = -EC``; requires the
    transmon regime EJ/EC >= 20.
    """
    if ec <= 0 or ej <= 0:
        raise ValueError("EJ and EC must be positive")
    if ej / ec < 20.0:
        raise ValueError(f"EJ/EC = {ej/ec:.1f} below the transmon regime (>= 20)")
    f01 = np.sqrt(8.0 * ej * ec) - ec
    return TransmonParams(name=name, f01=float(f01), anharmonicity=-float(ec), levels=levels)


def drive_frequency(device: DeviceSpec, spec: DriveSpec) -> float:
    """Drive carrier frequency in GHz: transition frequency plus detuning."""
    qubit = get_qubit(device, spec.target)
    base = qubit.transition_frequency(spec.transition)
    f = base + spec.detuning * 1e-3
    if abs(spec.detuning) * 1e-3 >= base:
        raise ValueError(f"detuning {spec.detuning} MHz not sensible for a {base} GHz transition")
    return f


def number_operator(levels: int) -> np.ndarray:
    return np.diag(np.arange(levels, dtype=complex))


def charge_operator(levels: int) -> np.ndarray:
    """a + a^dag with sqrt(n+1) matrix elements."""
    x = np.zeros((levels, levels), dtype=complex)
    for n in range(levels - 1):
        x[n, n + 1] = x[n + 1, n] = np.sqrt(n + 1.0)
    return x


def _lowering(levels: int) -> np.ndarray:
    a = np.zeros((levels, levels), dtype=complex)
    for n in range(1, levels):
        a[n - 1, n] = np.sqrt(n)
    return a


def _embed(op: np.ndarray, idx: int, dims) -> np.ndarray:
    ops = [np.eye(d, dtype=complex) for d in dims]
    ops[idx] = op
    return tensor(ops)


def _bare_energies_angular(qubit: TransmonParams) -> np.ndarray:
    """Diagonal bare energies in rad/ns, offset so the qubit block is traceless."""
    e = qubit.level_energies() * TWO_PI  # rad/ns
    return e - 0.5 * TWO_PI * qubit.f01


def _envelope_fns(spec: DriveSpec):
    env = spec.envelope
    t0 = spec.t_start

    if env is None:
        return (lambda t: np.ones_like(np.asarray(t, dtype=float)),
                lambda t: np.zeros_like(np.asarray(t, dtype=float)))

    def in_phase(t):
        t = np.asarray(t, dtype=float)
        tau = np.clip(t - t0, 0.0, env.duration)
        i_p, _ = envelope_eval(env, tau)
        inside = (t >= t0) & (t <= t0 + env.duration)
        return np.where(inside, i_p, 0.0)

    def quadrature(t):
        t = np.asarray(t, dtype=float)
        tau = np.clip(t - t0, 0.0, env.duration)
        _, q_p = envelope_eval(env, tau)
        inside = (t >= t0) & (t <= t0 + env.duration)
        return np.where(inside, q_p, 0.0)

    return in_phase, quadrature


def _frame_frequencies(device: DeviceSpec, drives, frame: str,
                       frame_freqs: dict | None) -> np.ndarray:
    """Per-qubit frame frequency in rad/ns."""
    n = len(device.qubits)
    if frame == "lab":
        return np.zeros(n)
    if frame != "rotating":
        raise ValueError(f"unknown frame {frame!r}")
    nu = np.full(n, np.nan)
    if frame_freqs:
        for name, f_ghz in frame_freqs.items():
            nu[device.index(name)] = TWO_PI * f_ghz
    carriers: dict[int, float] = {}
    for d in drives:
        idx = device.index(d.target)
        w = TWO_PI * drive_frequency(device, d)
        if idx in carriers and abs(carriers[idx] - w) > 1e-12 and np.isnan(nu[idx]):
            raise ValueError(
                f"conflicting drive carriers on {d.target}; pass frame_freqs to "
                f"choose this qubit's rotating frame")
        carriers.setdefault(idx, w)
    for idx in range(n):
        if np.isnan(nu[idx]):
            nu[idx] = carriers.get(idx, TWO_PI * device.qubits[idx].f01)
    return nu


def hamiltonian_terms(device: DeviceSpec, drives, frame: str = "rotating",
                      rwa: bool = False, frame_freqs: dict | None = None) -> HamiltonianModel:
    """Assemble the register Hamiltonian as a term list for the integrators.

    In the rotating frame each qubit rotates at its drive carrier (its bare
    frequency if undriven, or an explicit ``frame_freqs`` entry in GHz); the
    transformation is exact and counter-rotating terms are kept unless
    ``rwa=True``.
    """
    drives = list(drives)
    for d in drives:
        if d.target not in device.names:
            raise ValueError(f"drive targets unknown qubit {d.target!r}")
    dims = device.dims
    nq = len(device.qubits)
    nu = _frame_frequencies(device, drives, frame, frame_freqs)

    dim = int(np.prod(dims))
    static = np.zeros((dim, dim), dtype=complex)
    for k, q in enumerate(device.qubits):
        diag = _bare_energies_angular(q) - nu[k] * np.arange(q.levels)
        static += _embed(np.diag(diag.astype(complex)), k, dims)

    terms: list[tuple[np.ndarray, object]] = []
    fastest = 0.1  # rad/ns floor

    # static couplings
    for c in device.couplings:
        k, l = device.index(c.pair[0]), device.index(c.pair[1])
        j_ang = TWO_PI * c.j_mhz * 1e-3
        qk, ql = device.qubits[k], device.qubits[l]
        a_k = _lowering(qk.levels)
        a_l = _lowering(ql.levels)
        hop = _embed(a_k.conj().T, k, dims) @ _embed(a_l, l, dims)  # a_k^dag a_l
        dnu = nu[k] - nu[l]
        if abs(dnu) < 1e-14:
            static += j_ang * (hop + hop.conj().T)
        else:
            terms.append((j_ang * hop, _exp_coeff(dnu)))
            fastest = max(fastest, abs(dnu))
        both_two_level = qk.levels == 2 and ql.levels == 2
        if both_two_level:
            # full sigma_x sigma_x: add the double-(de)excitation part
            dbl = _embed(a_k.conj().T, k, dims) @ _embed(a_l.conj().T, l, dims)
            snu = nu[k] + nu[l]
            if rwa and frame == "rotating":
                pass  # dropped with the counter-rotating terms
            elif abs(snu) < 1e-14:
                static += j_ang * (dbl + dbl.conj().T)
            else:
                terms.append((j_ang * dbl, _exp_coeff(snu)))
                fastest = max(fastest, abs(snu))

    # drives
    for d in drives:
        k = device.index(d.target)
        qk = device.qubits[k]
        if d.transition == "12" and qk.levels < 3:
            raise ValueError(f"1-2 drive on two-level qubit {d.target}")
        w_c = TWO_PI * drive_frequency(device, d)
        a_ang = TWO_PI * d.amplitude * 1e-3
        n_low = 0 if d.transition == "01" else 1
        scale = 1.0 / np.sqrt(n_low + 1.0)  # amplitude = Rabi of addressed transition
        low = _embed(scale * _lowering(qk.levels), k, dims)
        e_i, e_q = _envelope_fns(d)
        phi = d.phase
        d_co = w_c - nu[k]
        d_cr = w_c + nu[k]
        terms.append((low, _drive_coeff(a_ang, phi, e_i, e_q, d_co, +1)))
        fastest = max(fastest, abs(d_co), a_ang)
        if not (rwa and frame == "rotating"):
            terms.append((low, _drive_coeff(a_ang, phi, e_i, e_q, d_cr, -1)))
            fastest = max(fastest, abs(d_cr))
        if d.envelope is not None and d.envelope.ramp > 0:
            fastest = max(fastest, np.pi / d.envelope.ramp)

    step = min(0.05, (TWO_PI / fastest) / 40.0)
    return HamiltonianModel(dim, static, terms, suggested_step=max(step, 2e-4))


def _exp_coeff(omega: float):
    def f(t):
        return np.exp(1j * omega * np.asarray(t, dtype=float))
    return f


def _drive_coeff(a_ang: float, phi: float, e_i, e_q, delta_w: float, sign: int):
    """Coefficient of the lowering operator for one sideband.

    ``sign=+1`` is the co-rotating piece (A/2)(eI - i eQ') e^{i(dW t + phi)};
    ``sign=-1`` the counter-rotating piece (A/2)(eI + i eQ') e^{-i(dW t + phi)}
    with dW the respective frequency offset and eQ' = 2 pi * eQ the scaled
    quadrature waveform.
    """
    def f(t):
        t = np.asarray(t, dtype=float)
        ei = e_i(t)
        eq = TWO_PI * e_q(t)
        if sign > 0:
            return 0.5 * a_ang * (ei - 1j * eq) * np.exp(1j * (delta_w * t + phi))
        return 0.5 * a_ang * (ei + 1j * eq) * np.exp(-1j * (delta_w * t + phi))
    return f


def build_hamiltonian(device: DeviceSpec, drives, frame: str, t: float,
                      rwa: bool = False, frame_freqs: dict | None = None) -> np.ndarray:
    """Register Hamiltonian matrix (rad/ns) at time t (ns)."""
    return hamiltonian_terms(device, drives, frame, rwa, frame_freqs).matrix(t)
