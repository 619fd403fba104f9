"""Dense linear-algebra primitives for small qubit/qutrit registers.

States, operators, Pauli algebra and Pauli-transfer-matrix (PTM) machinery
shared by the device, dynamics, calibration and benchmarking layers.

Conventions
-----------
* Register order: the leftmost tensor factor / leftmost Pauli letter is
  qubit 1, so basis kets read ``|q1 q2 ...>`` and ``tensor([X, I])`` acts
  on qubit 1.
* PTMs use the Pauli basis normalized by 1/sqrt(d), i.e.
  ``R[i, j] = Tr[P_i L(P_j)] / d`` with ``d = 2**n``.
* ``sigma_z |0> = +|0>``.
* Everything is double-precision dense numpy; values are immutable once
  constructed and all operations are pure functions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PAULI",
    "StateVector",
    "DensityMatrix",
    "PauliString",
    "PauliTransferMatrix",
    "ket",
    "basis_state",
    "tensor",
    "pauli_strings",
    "pauli_matrix",
    "channel_to_ptm",
    "ptm_fidelities",
    "error_ptm",
    "partial_trace",
    "depolarizing_kraus",
    "apply_channel",
    "haar_unitary",
    "projector",
]

I2 = np.eye(2, dtype=complex)
X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}

_LETTERS = "IXYZ"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateVector:
    """Pure state of a multi-level register.

    ``dims`` lists the per-subsystem dimensions, e.g. ``(2, 2)`` for two
    qubits or ``(3, 3)`` for two qutrits.
    """

    amplitudes: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        amp = _freeze(np.asarray(self.amplitudes, dtype=complex).ravel())
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if amp.size != int(np.prod(self.dims)):
            raise ValueError(
                f"amplitude length {amp.size} does not match dims {self.dims}"
            )

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def validate(self, tol: float = 1e-9) -> "StateVector":
        if abs(self.norm() ** 2 - 1.0) > tol:
            raise ValueError(f"state norm^2 deviates from 1 by {self.norm()**2 - 1:.3e}")
        return self

    def density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()), self.dims)

    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class DensityMatrix:
    """Mixed state of a multi-level register."""

    entries: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        m = _freeze(np.asarray(self.entries, dtype=complex))
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        d = int(np.prod(self.dims))
        if m.shape != (d, d):
            raise ValueError(f"entries shape {m.shape} does not match dims {self.dims}")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def validate(self, tol: float = 1e-9, eig_tol: float = 1e-8) -> "DensityMatrix":
        m = self.entries
        herm = np.max(np.abs(m - m.conj().T))
        if herm > tol:
            raise ValueError(f"density matrix not Hermitian: defect {herm:.3e}")
        tr = np.trace(m)
        if abs(tr - 1.0) > tol:
            raise ValueError(f"trace deviates from 1 by {tr - 1:.3e}")
        w = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if w.min() < -eig_tol:
            raise ValueError(f"negative eigenvalue {w.min():.3e}")
        return self

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.entries))


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Paulis, e.g. ``PauliString("XZ")``."""

    letters: str

    def __post_init__(self):
        if not self.letters or any(c not in _LETTERS for c in self.letters):
            raise ValueError(f"invalid Pauli string {self.letters!r}")

    @property
    def n(self) -> int:
        return len(self.letters)

    def matrix(self) -> np.ndarray:
        return pauli_matrix(self)

    def weight(self) -> int:
        return sum(1 for c in self.letters if c != "I")

    def commutes_with(self, other: "PauliString") -> bool:
        """True if the two strings commute (qubit-wise anticommutation parity)."""
        if self.n != other.n:
            raise ValueError("length mismatch")
        anti = sum(
            1
            for a, b in zip(self.letters, other.letters)
            if a != "I" and b != "I" and a != b
        )
        return anti % 2 == 0

    def __str__(self) -> str:
        return self.letters


@dataclass(frozen=True)
class PauliTransferMatrix:
    """Real matrix of a channel in the normalized Pauli basis."""

    entries: np.ndarray
    n: int

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        d4 = 4**self.n
        if m.shape != (d4, d4):
            raise ValueError(f"PTM shape {m.shape} does not match n={self.n}")
        object.__setattr__(self, "entries", _freeze(m))

    def validate(self, tol: float = 1e-9, trace_preserving: bool = True) -> "PauliTransferMatrix":
        m = self.entries
        if np.max(np.abs(m)) > 1.0 + tol:
            raise ValueError(f"PTM entry out of [-1, 1]: {np.max(np.abs(m)):.12f}")
        if trace_preserving:
            first = np.zeros(m.shape[0])
            first[0] = 1.0
            if np.max(np.abs(m[0] - first)) > tol:
                raise ValueError("first PTM row is not (1, 0, ..., 0)")
        return self

    @property
    def dim(self) -> int:
        return 2**self.n

    def __matmul__(self, other: "PauliTransferMatrix") -> "PauliTransferMatrix":
        if self.n != other.n:
            raise ValueError("qubit count mismatch")
        return PauliTransferMatrix(self.entries @ other.entries, self.n)


def ket(label: str | Sequence[int], dims: Sequence[int] | None = None) -> np.ndarray:
    """Basis ket from a label like ``"10"`` or ``"02"`` (leftmost = qubit 1)."""
    digits = [int(c) for c in label] if isinstance(label, str) else [int(c) for c in label]
    if dims is None:
        dims = [max(2, d + 1) for d in digits]
    if len(dims) != len(digits):
        raise ValueError("label/dims length mismatch")
    vecs = []
    for q, d in zip(digits, dims):
        if q >= d:
            raise ValueError(f"level {q} outside dimension {d}")
        v = np.zeros(d, dtype=complex)
        v[q] = 1.0
        vecs.append(v)
    out = vecs[0]
    for v in vecs[1:]:
        out = np.kron(out, v)
    return out


def basis_state(label: str | Sequence[int], dims: Sequence[int] | None = None) -> StateVector:
    digits = [int(c) for c in label] if isinstance(label, str) else list(label)
    if dims is None:
        dims = [max(2, d + 1) for d in digits]
    return StateVector(ket(digits, dims), tuple(dims))


def projector(label: str | Sequence[int], dims: Sequence[int] | None = None) -> np.ndarray:
    v = ket(label, dims)
    return np.outer(v, v.conj())


def tensor(ops: Iterable[np.ndarray]) -> np.ndarray:
    """Kronecker product in register order (leftmost factor = qubit 1)."""
    ops = list(ops)
    if not ops:
        raise ValueError("empty operator list")
    out = np.asarray(ops[0], dtype=complex)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise ValueError("operands must be square")
    for op in ops[1:]:
        op = np.asarray(op, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ValueError("operands must be square")
        out = np.kron(out, op)
    return out


def pauli_strings(n: int) -> list[PauliString]:
    """All 4^n Pauli strings in lexicographic (I, X, Y, Z) digit order."""
    return [PauliString("".join(p)) for p in itertools.product(_LETTERS, repeat=n)]


def pauli_matrix(p: PauliString | str) -> np.ndarray:
    """2^n x 2^n matrix of a Pauli string."""
    letters = p.letters if isinstance(p, PauliString) else PauliString(p).letters
    return tensor([PAULI[c] for c in letters])


def _kraus_list(channel) -> list[np.ndarray]:
    if isinstance(channel, np.ndarray):
        return [channel]
    return [np.asarray(k, dtype=complex) for k in channel]


def apply_channel(channel, rho: np.ndarray) -> np.ndarray:
    """Apply a channel (unitary matrix or Kraus list) to a density matrix."""
    ks = _kraus_list(channel)
    out = np.zeros_like(np.asarray(rho, dtype=complex))
    for k in ks:
        out += k @ rho @ k.conj().T
    return out


def channel_to_ptm(channel, n: int) -> PauliTransferMatrix:
    """PTM of a channel given as a unitary or a Kraus operator set.

    ``R[i, j] = Tr[P_i L(P_j)] / 2^n`` over the Pauli strings of
    :func:`pauli_strings`.
    """
    ks = _kraus_list(channel)
    d = 2**n
    for k in ks:
        if k.shape != (d, d):
            raise ValueError(f"operator shape {k.shape} does not match n={n} (d={d})")
    mats = [pauli_matrix(p) for p in pauli_strings(n)]
    r = np.empty((d * d, d * d), dtype=float)
    for j, pj in enumerate(mats):
        mapped = apply_channel(ks, pj)
        for i, pi in enumerate(mats):
            r[i, j] = np.real(np.trace(pi @ mapped)) / d
    return PauliTransferMatrix(r, n)


def _as_ptm_array(r) -> np.ndarray:
    return r.entries if isinstance(r, PauliTransferMatrix) else np.asarray(r, dtype=float)


def ptm_fidelities(r_ideal, r_exp) -> tuple[float, float]:
    """Process and average-gate fidelity of an experimental PTM vs an ideal one.

    ``F_p = Tr(R_ideal^T R_exp) / d^2`` and ``F_g = (d F_p + 1) / (d + 1)``.
    """
    a = _as_ptm_array(r_ideal)
    b = _as_ptm_array(r_exp)
    if a.shape != b.shape:
        raise ValueError(f"PTM shape mismatch {a.shape} vs {b.shape}")
    d = int(round(np.sqrt(a.shape[0])))
    fp = float(np.trace(a.T @ b)) / d**2
    fg = (d * fp + 1.0) / (d + 1.0)
    return fp, fg


def error_ptm(r_exp, r_ideal) -> PauliTransferMatrix:
    """Error PTM ``R_exp R_ideal^-1`` (identity when the two agree)."""
    a = _as_ptm_array(r_exp)
    b = _as_ptm_array(r_ideal)
    if a.shape != b.shape:
        raise ValueError(f"PTM shape mismatch {a.shape} vs {b.shape}")
    n = int(round(np.log2(np.sqrt(a.shape[0]))))
    try:
        inv = np.linalg.inv(b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("ideal PTM is singular") from exc
    return PauliTransferMatrix(a @ inv, n)


def partial_trace(rho, keep: Sequence[int], dims: Sequence[int] | None = None):
    """Reduced state over the ``keep`` subsystems (0-indexed, in register order).

    Accepts a :class:`DensityMatrix` (dims taken from it) or a raw matrix
    plus explicit ``dims``.
    """
    if isinstance(rho, DensityMatrix):
        dims = rho.dims
        mat = rho.entries
        wrap = True
    else:
        if dims is None:
            raise ValueError("dims required for raw-matrix input")
        mat = np.asarray(rho, dtype=complex)
        wrap = False
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if not keep or any(k < 0 or k >= n for k in keep):
        raise ValueError(f"bad subsystem indices {keep} for {n} subsystems")
    # trace out unkept subsystems back to front so axis indices stay valid
    t = mat.reshape(dims + dims)
    cur_dims = list(dims)
    for q in sorted(set(range(n)) - set(keep), reverse=True):
        m = len(cur_dims)
        t = np.trace(t, axis1=q, axis2=q + m)
        cur_dims.pop(q)
    d_out = int(np.prod([dims[k] for k in keep]))
    out = t.reshape(d_out, d_out)
    if wrap:
        return DensityMatrix(out, tuple(dims[k] for k in keep))
    return out


def depolarizing_kraus(p: float, n: int = 1) -> list[np.ndarray]:
    """Kraus set of the uniform depolarizing channel ``rho -> (1-p) rho + p I/d``.

    For one qubit this is the four-operator set
    ``{sqrt(1-3p/4) I, sqrt(p/4) X, sqrt(p/4) Y, sqrt(p/4) Z}``, so the PTM is
    ``diag(1, 1-p, 1-p, 1-p)``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    d4 = 4**n
    ks = []
    for i, ps in enumerate(pauli_strings(n)):
        w = (1.0 - p) + p / d4 if i == 0 else p / d4
        if w > 0:
            ks.append(np.sqrt(w) * pauli_matrix(ps))
    return ks


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
