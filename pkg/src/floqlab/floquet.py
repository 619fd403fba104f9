"""Floquet theory engine.

Analytic two-level quasienergies and periodic modes, numeric solvers (a
one-period propagator diagonalizer and a Fourier/extended-space block
matrix), bare-to-mode index assignment and the effective transverse (XY)
and longitudinal (ZZ) coupling rates of two driven, statically coupled
qubits.

Quasienergies are reported folded into the first Brillouin zone
``(-w_d/2, w_d/2]`` (rad/ns); modes are stored on a uniform grid over one
drive period with endpoints included.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .dynamics import HamiltonianModel, IntegratorError, propagator_checkpoints
from . import device as dev

__all__ = [
    "TwoLevelDrive",
    "FloquetSolution",
    "EffectiveXXZ",
    "DegenerateAssignmentError",
    "NonConvergedError",
    "quasienergies_two_level",
    "modes_two_level",
    "dressed_transition_frequency",
    "two_level_solution",
    "solve_propagator",
    "solve_sambe",
    "assign_indices",
    "j_xy_analytic",
    "j_zz_analytic",
    "effective_xxz_numeric",
    "xy_resonant_amplitude",
]

TWO_PI = 2.0 * np.pi


class DegenerateAssignmentError(ValueError):
    """Bare-to-Floquet index assignment is ambiguous (overlap at 0.5)."""


class NonConvergedError(RuntimeError):
    """Fourier-block solver did not converge at the requested truncation."""

    def __init__(self, residual: float, k: int):
        super().__init__(f"outermost-block residual {residual:.3e} at K={k}")
        self.residual = residual
        self.k = k


@dataclass(frozen=True)
class TwoLevelDrive:
    """Driven two-level problem in angular units (rad/ns).

    ``a`` is the Rabi amplitude, ``delta = w_d - w_q`` the detuning,
    ``omega_d`` the drive frequency and ``phi`` the drive phase.
    """

    a: float
    delta: float
    omega_d: float
    phi: float = 0.0

    def __post_init__(self):
        if self.omega_d <= 0:
            raise ValueError("omega_d must be positive")
        if self.a < 0:
            raise ValueError("a must be >= 0")

    @property
    def rabi_splitting(self) -> float:
        return float(np.hypot(self.a, self.delta))


def quasienergies_two_level(d: TwoLevelDrive, ks=(0, 1)) -> np.ndarray:
    """Quasienergy ladder ``(k - 1/2) w_d +/- r/2`` for the given k values.

    Returns an array of shape (len(ks), 2) with columns (eps_plus, eps_minus).
    Validity requires weak driving ``a << w_q, w_d``; a warning is issued
    outside that regime.
    """
    if d.a > 0.5 * d.omega_d:
        warnings.warn("drive amplitude outside the weak-drive validity regime",
                      RuntimeWarning)
    r = d.rabi_splitting
    ks = np.asarray(list(ks), dtype=float)
    eps_p = (ks - 0.5) * d.omega_d + 0.5 * r
    eps_m = (ks - 0.5) * d.omega_d - 0.5 * r
    return np.stack([eps_p, eps_m], axis=1)


def dressed_transition_frequency(d: TwoLevelDrive) -> float:
    """Lab-frame dressed 0-1 transition frequency (rad/ns).

    ``w_d + r`` for red detuning (delta < 0), ``w_d - r`` for blue; equals
    the bare frequency at zero amplitude either way.
    """
    r = d.rabi_splitting
    return d.omega_d + r if d.delta < 0 else d.omega_d - r


def xy_resonant_amplitude(delta_q: float, abs_detuning: float) -> float:
    """Two-level amplitude (rad/ns) that brings a red/blue driven pair into
    transverse resonance: solves ``2 sqrt(A^2 + d^2) = delta_q + 2|d|``.

    ``delta_q`` is the bare qubit frequency difference (rad/ns, > 0) and
    ``abs_detuning`` the common drive detuning magnitude.
    """
    r = 0.5 * delta_q + abs_detuning
    if r < abs_detuning:
        raise ValueError("no resonant amplitude for these parameters")
    return float(np.sqrt(r**2 - abs_detuning**2))


def _mode_components(d: TwoLevelDrive) -> tuple[float, float]:
    """Numerically stable (delta + r, delta - r)."""
    r = d.rabi_splitting
    if d.delta >= 0:
        dp = d.delta + r
        dm = -(d.a**2) / dp if dp > 0 else 0.0
    else:
        dm = d.delta - r
        dp = (d.a**2) / (-dm) if dm < 0 else 0.0
    return dp, dm


def modes_two_level(d: TwoLevelDrive, t) -> tuple[np.ndarray, np.ndarray]:
    """Periodic Floquet modes ``(|u_+(t)>, |u_->(t))`` of the driven qubit.

    ``|u_+-> ~ (delta +- r)|0> + A e^{-i(w_d t + phi)}|1>``, normalized.
    Vectorized over t: returns arrays of shape (2,) or (len(t), 2).
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    phase = np.exp(-1j * (d.omega_d * t_arr + d.phi))
    if d.a == 0.0:
        up = np.stack([np.ones_like(phase), np.zeros_like(phase)], axis=1)
        um = np.stack([np.zeros_like(phase), phase], axis=1)
        if d.delta < 0:
            up, um = np.stack([np.zeros_like(phase), phase], axis=1), \
                np.stack([np.ones_like(phase), np.zeros_like(phase)], axis=1)
    else:
        dp, dm = _mode_components(d)
        up = np.stack([np.full_like(phase, dp), d.a * phase], axis=1)
        um = np.stack([np.full_like(phase, dm), d.a * phase], axis=1)
        up /= np.linalg.norm(up, axis=1)[:, None]
        um /= np.linalg.norm(um, axis=1)[:, None]
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return up[0], um[0]
    return up, um


@dataclass(frozen=True)
class FloquetSolution:
    """Quasienergies, periodic modes on a time grid, and index assignment.

    ``modes[i]`` is a (dim, n_modes) matrix whose columns are the modes at
    ``times[i]``; ``index_map[n]`` is the mode column adiabatically
    connected to bare level n.
    """

    quasienergies: np.ndarray
    times: np.ndarray
    modes: np.ndarray
    period: float
    omega_d: float
    index_map: dict

    def mode_columns(self) -> np.ndarray:
        return self.modes

    def mode_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the mode matrix at time t (mod period)."""
        tau = float(t) % self.period
        idx = np.searchsorted(self.times, tau, side="right") - 1
        idx = min(max(idx, 0), len(self.times) - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = 0.0 if t1 == t0 else (tau - t0) / (t1 - t0)
        return (1.0 - w) * self.modes[idx] + w * self.modes[idx + 1]

    def validate(self, tol: float = 1e-8) -> "FloquetSolution":
        d = self.modes.shape[2]
        eye = np.eye(d)
        for i in (0, len(self.times) // 2, len(self.times) - 1):
            g = self.modes[i].conj().T @ self.modes[i]
            if np.max(np.abs(g - eye)) > tol:
                raise ValueError(f"modes not orthonormal at t={self.times[i]:.4f} ns")
        if np.max(np.abs(self.modes[-1] - self.modes[0])) > 1e-6:
            raise ValueError("modes are not periodic over one period")
        return self


def _fold(eps: np.ndarray, omega_d: float) -> np.ndarray:
    """Fold quasienergies into (-w_d/2, w_d/2]."""
    out = np.mod(eps + 0.5 * omega_d, omega_d) - 0.5 * omega_d
    return np.where(out <= -0.5 * omega_d + 1e-15, out + omega_d, out)


def assign_indices(sol: FloquetSolution, tol: float = 1e-6) -> dict:
    """Bare-level -> mode-column bijection by the >1/2 overlap rule.

    Raises :class:`DegenerateAssignmentError` when the best overlap is not
    strictly above ``0.5 + tol`` (e.g. exactly on resonance).
    """
    m0 = sol.modes[0]
    d = m0.shape[1]
    overlap = np.abs(m0) ** 2  # overlap[bare, mode]
    mapping: dict[int, int] = {}
    used = set()
    for n in range(d):
        mode = int(np.argmax(overlap[n]))
        if overlap[n, mode] <= 0.5 + tol:
            raise DegenerateAssignmentError(
                f"bare level {n}: best overlap {overlap[n, mode]:.6f} is ambiguous")
        if mode in used:
            raise DegenerateAssignmentError(f"mode {mode} claimed twice")
        used.add(mode)
        mapping[n] = mode
    return mapping


def two_level_solution(d: TwoLevelDrive, n_grid: int = 256) -> FloquetSolution:
    """Analytic Floquet solution of the cosine-driven two-level problem."""
    period = TWO_PI / d.omega_d
    times = np.linspace(0.0, period, n_grid + 1)
    up, um = modes_two_level(d, times)
    modes = np.stack([up, um], axis=2)  # columns: (+, -)
    r = d.rabi_splitting
    eps_raw = np.array([-0.5 * d.omega_d + 0.5 * r, -0.5 * d.omega_d - 0.5 * r])
    eps = _fold(eps_raw, d.omega_d)
    # folding eps by k*w_d must shift the mode by e^{i k w_d t} to keep
    # |psi> = e^{-i eps t} |u(t)> consistent
    kshift = np.rint((eps - eps_raw) / d.omega_d)
    harm = np.exp(1j * np.outer(times, kshift * d.omega_d))  # (n_t, 2)
    modes = modes * harm[:, None, :]
    sol = FloquetSolution(eps, times, modes, period, d.omega_d, {})
    mapping = assign_indices(sol)
    return replace(sol, index_map=mapping)


def solve_propagator(h, period: float, n_grid: int = 256,
                     max_step: float | None = None,
                     unitarity_tol: float = 1e-9) -> FloquetSolution:
    """Floquet solution from diagonalizing the one-period propagator.

    Eigenphases of U(T) give the quasienergies mod w_d; modes are
    reconstructed as ``|u_n(t)> = e^{i eps_n t} U(t) |u_n(0)>`` on the grid.
    """
    model = h if isinstance(h, HamiltonianModel) else HamiltonianModel.static_only(h)
    omega_d = TWO_PI / period
    times = np.linspace(0.0, period, n_grid + 1)
    us = propagator_checkpoints(model, times, max_step=max_step)
    u_t = us[-1]
    defect = np.max(np.abs(u_t.conj().T @ u_t - np.eye(model.dim)))
    if defect > unitarity_tol:
        raise IntegratorError(
            f"one-period propagator unitarity defect {defect:.3e} > {unitarity_tol}")
    # Schur form of a unitary matrix is diagonal with orthonormal vectors
    t_mat, z = scipy.linalg.schur(u_t, output="complex")
    lam = np.diag(t_mat)
    eps = _fold(-np.angle(lam) / period, omega_d)
    phases = np.exp(1j * np.outer(times, eps))  # (n_t, d)
    mode_list = np.empty((len(times), model.dim, model.dim), dtype=complex)
    for i, u in enumerate(us):
        mode_list[i] = (u @ z) * phases[i][None, :]
    sol = FloquetSolution(eps, times, mode_list, period, omega_d, {})
    mapping = assign_indices(sol)
    return replace(sol, index_map=mapping)


def solve_sambe(h0: np.ndarray, v: np.ndarray, omega_d: float, k: int,
                phi: float = 0.0, n_grid: int = 256,
                residual_tol: float = 1e-6) -> FloquetSolution:
    """Floquet solution from the Fourier block (extended-space) eigenproblem.

    The drive is ``v cos(w_d t + phi)``; the block matrix couples Fourier
    harmonics ``|u^k>`` for ``k in [-K, K]`` with off-diagonal blocks
    ``e^{+-i phi} v / 2``. Raises :class:`NonConvergedError` when the
    selected eigenvectors still carry weight in the outermost blocks.
    """
    if k < 1:
        raise ValueError("truncation K must be >= 1")
    h0 = np.asarray(h0, dtype=complex)
    v = np.asarray(v, dtype=complex)
    d = h0.shape[0]
    nb = 2 * k + 1
    big = np.zeros((nb * d, nb * d), dtype=complex)
    for i, kk in enumerate(range(-k, k + 1)):
        big[i * d:(i + 1) * d, i * d:(i + 1) * d] = h0 + kk * omega_d * np.eye(d)
        if i > 0:  # block (k, k-1)
            big[i * d:(i + 1) * d, (i - 1) * d:i * d] = 0.5 * np.exp(1j * phi) * v
        if i < nb - 1:  # block (k, k+1)
            big[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = 0.5 * np.exp(-1j * phi) * v
    w, vec = np.linalg.eigh(big)

    # pick the d eigenvectors with Fourier weight centered on the k=0 block
    ks = np.repeat(np.arange(-k, k + 1), d)
    weights = np.abs(vec) ** 2
    block_weight = np.add.reduceat(weights, np.arange(0, nb * d, d), axis=0)  # (nb, N)
    centroid = (np.arange(-k, k + 1)[:, None] * block_weight).sum(axis=0)
    order = np.argsort(np.abs(centroid), kind="stable")
    sel = order[:d]
    residual = float(block_weight[[0, -1], :][:, sel].sum(axis=0).max())
    if residual > residual_tol:
        raise NonConvergedError(residual, k)

    eps = _fold(w[sel], omega_d)
    period = TWO_PI / omega_d
    times = np.linspace(0.0, period, n_grid + 1)
    harmonics = np.exp(1j * np.outer(times, np.arange(-k, k + 1) * omega_d))  # (n_t, nb)
    coeffs = vec[:, sel].reshape(nb, d, d)  # (harmonic, component, mode)
    modes = np.einsum("tk,kim->tim", harmonics, coeffs)
    # keep |psi> = e^{-i eps t}|u(t)> consistent after folding
    kshift = np.rint((eps - w[sel]) / omega_d)
    modes = modes * np.exp(1j * np.outer(times, kshift * omega_d))[:, None, :]
    # sort by quasienergy for deterministic output
    srt = np.argsort(eps, kind="stable")
    sol = FloquetSolution(eps[srt], times, modes[:, :, srt], period, omega_d, {})
    mapping = assign_indices(sol)
    return replace(sol, index_map=mapping)


# ---------------------------------------------------------------------------
# effective Heisenberg couplings


def j_xy_analytic(j_mhz: float, a: float, delta: float) -> float:
    """Closed-form |J_XY| (MHz) of the symmetric red/blue configuration.

    ``|J_XY| = J (|delta| + sqrt(A^2 + delta^2))^2 / (4 (A^2 + delta^2))``
    with A, delta in rad/ns. Limits: J at A=0, J/4 at delta=0.
    """
    r2 = a * a + delta * delta
    if r2 == 0.0:
        return float(j_mhz)
    r = np.sqrt(r2)
    return float(j_mhz * (abs(delta) + r) ** 2 / (4.0 * r2))


def j_zz_analytic(j_mhz: float, a1: float, a2: float, delta1: float,
                  delta2: float, dphi: float) -> float:
    """Closed-form J_ZZ (MHz) for two same-carrier drives.

    ``J_ZZ = 2 J A1 A2 cos(dphi) / sqrt((A1^2+d1^2)(A2^2+d2^2))``; requires
    both detunings on the same side (both red or both blue).
    """
    if delta1 * delta2 < 0:
        raise ValueError("mixed detuning signs are not a supported ZZ configuration")
    if a1 == 0.0 or a2 == 0.0:
        return 0.0
    den = np.sqrt((a1**2 + delta1**2) * (a2**2 + delta2**2))
    return float(2.0 * j_mhz * a1 * a2 * np.cos(dphi) / den)


@dataclass(frozen=True)
class EffectiveXXZ:
    """Effective transverse and longitudinal coupling rates (MHz).

    ``j_xy`` uses the time-average convention of the closed forms above;
    the transverse coupling matrix element between |01> and |10> is
    ``2 pi j_xy`` rad/ns, so bare-population swap oscillations run at
    ``2 j_xy`` MHz. ``xy_detuned`` flags a transverse term evaluated off
    resonance; ``xy_gap`` is the residual quasienergy-transition mismatch
    (rad/ns).
    """

    j_xy: float
    j_zz: float
    xy_detuned: bool = False
    xy_gap: float = 0.0
    xy_phase: float = 0.0


def _c_series(sol: FloquetSolution, a: int, b: int, op: np.ndarray,
              tol: float = 1e-12) -> list[tuple[float, complex]]:
    """(frequency, coefficient) pairs of c_ab(t) = <psi_a| op |psi_b>.

    c_ab = e^{i(eps_a - eps_b) t} <u_a(t)| op |u_b(t)>; the periodic factor
    is expanded by FFT over the mode grid.
    """
    ca, cb = sol.index_map[a], sol.index_map[b]
    g = np.einsum("ti,ij,tj->t", sol.modes[:-1, :, ca].conj(), op, sol.modes[:-1, :, cb])
    n = g.size
    fhat = np.fft.fft(g) / n
    freqs_m = np.fft.fftfreq(n, d=1.0 / n)  # integer harmonics
    base = sol.quasienergies[ca] - sol.quasienergies[cb]
    out = []
    for m, c in zip(freqs_m, fhat):
        if abs(c) > tol:
            out.append((base + m * sol.omega_d, c))
    return out


def _dc_sum(s1, s2, tol_res: float) -> tuple[complex, float]:
    """Coherent sum of coefficient products with |f1 + f2| below tol_res.

    Returns (sum, gap) where gap is the smallest |f1 + f2| encountered; the
    sum runs over pairs within tol_res of zero.
    """
    best_gap = np.inf
    total = 0.0 + 0.0j
    for f1, c1 in s1:
        for f2, c2 in s2:
            gap = abs(f1 + f2)
            best_gap = min(best_gap, gap)
            if gap < tol_res:
                total += c1 * c2
    return total, best_gap


def effective_xxz_numeric(device, drives, tol_res: float = 1e-7,
                          n_grid: int = 256) -> EffectiveXXZ:
    """Effective XXZ rates from single-qubit Floquet modes.

    Builds the drive-dressed coefficient functions ``c_ab(t)`` for each
    qubit, expands them in frequency components and retains the
    energy-conserving products (the transverse 0110/1001 pair and the
    longitudinal diagonal combinations). Two-level qubits use the analytic
    modes, so the symmetric configurations reproduce the closed forms to
    numerical precision.
    """
    drives = list(drives)
    if len(drives) != 2 or drives[0].target == drives[1].target:
        raise ValueError("need exactly two drives on distinct qubits")
    names = [d.target for d in drives]
    j_mhz = None
    for c in device.couplings:
        if set(c.pair) == set(names):
            j_mhz = c.j_mhz
    if j_mhz is None:
        raise ValueError(f"no coupling between {names[0]} and {names[1]}")

    sols = []
    for d in drives:
        qubit = dev.get_qubit(device, d.target)
        if qubit.levels != 2:
            raise ValueError("effective couplings are defined for two-level qubits")
        d2 = TwoLevelDrive(
            a=TWO_PI * d.amplitude * 1e-3,
            delta=TWO_PI * d.detuning * 1e-3,
            omega_d=TWO_PI * dev.drive_frequency(device, d),
            phi=d.phase,
        )
        sols.append(two_level_solution(d2, n_grid=n_grid))

    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    s01_1 = _c_series(sols[0], 0, 1, sx)
    s10_2 = _c_series(sols[1], 1, 0, sx)
    xy_sum, xy_gap = _dc_sum(s01_1, s10_2, tol_res)
    detuned = xy_gap > tol_res
    j_xy = float(j_mhz * abs(xy_sum))
    phase = float(np.angle(xy_sum)) if abs(xy_sum) > 1e-15 else 0.0

    dz1 = _series_sub(_c_series(sols[0], 0, 0, sx), _c_series(sols[0], 1, 1, sx))
    dz2 = _series_sub(_c_series(sols[1], 0, 0, sx), _c_series(sols[1], 1, 1, sx))
    zz_sum, _ = _dc_sum(dz1, dz2, tol_res)
    j_zz = float(j_mhz * np.real(zz_sum))

    return EffectiveXXZ(j_xy=j_xy, j_zz=j_zz, xy_detuned=bool(detuned),
                        xy_gap=float(xy_gap), xy_phase=phase)


def _series_sub(s1, s2) -> list[tuple[float, complex]]:
    """Frequency-resolved difference s1 - s2 of two coefficient series."""
    acc: dict[float, complex] = {}
    for f, c in s1:
        acc[round(f, 12)] = acc.get(round(f, 12), 0.0) + c
    for f, c in s2:
        acc[round(f, 12)] = acc.get(round(f, 12), 0.0) - c
    return [(f, c) for f, c in acc.items() if abs(c) > 1e-12]
