"""Pauli and controlled-Pauli errors, and their propagation through gates.

An :class:`ErrorTerm` is a (multi-)controlled X or Z on one target. A
:class:`GeneralizedError` is a product of such terms kept in application
order: ``terms[0]`` acts first. Phases are powers of ``i`` stored mod 4, with
the convention ``X·Z = -iY``.

Notation used in reports and fixtures (operator order, rightmost acts first)::

    X[T1.3]   Z[T2.0]   CX[T2.3 -> A.3]   CCX[T1.0, T2.0 -> A.0]
    CZ[T1.3, T2.3]   CCZ[T1.0, T2.0, A.0]   Xbar[T3]   Zbar[T3]
    -i * X[T1.0] * Z[T1.0]     I
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING, Any

import numpy as np

from .circuit.ir import Gate, QubitId

if TYPE_CHECKING:
    from .css_code import CssCode

_PHASE_TEXT = {0: "", 1: "i * ", 2: "-", 3: "-i * "}


class ClosureFailure(ValueError):
    """The conjugated error is not a product of <=2-control X/Z terms."""


class NotationError(ValueError):
    pass


# --- plain Pauli operators (symplectic form) --------------------------------


@dataclass(frozen=True)
class PauliOperator:
    """``i**phase · X^x · Z^z`` on ``n`` qubits (Z part acts first)."""

    x: tuple[int, ...]
    z: tuple[int, ...]
    phase: int = 0

    def __post_init__(self):
        if len(self.x) != len(self.z):
            raise ValueError("x and z parts differ in length")
        object.__setattr__(self, "x", tuple(int(b) & 1 for b in self.x))
        object.__setattr__(self, "z", tuple(int(b) & 1 for b in self.z))
        object.__setattr__(self, "phase", self.phase % 4)

    @property
    def n(self) -> int:
        return len(self.x)

    @classmethod
    def identity(cls, n: int) -> PauliOperator:
        return cls((0,) * n, (0,) * n)

    @classmethod
    def from_label(cls, label: str) -> PauliOperator:
        """``"IXYZ"``-style label, qubit 0 first; Y is stored as ``i·XZ``."""
        x = tuple(int(c in "XY") for c in label)
        z = tuple(int(c in "ZY") for c in label)
        return cls(x, z, label.count("Y"))

    @classmethod
    def single(cls, n: int, qubit: int, letter: str) -> PauliOperator:
        label = ["I"] * n
        label[qubit] = letter
        return cls.from_label("".join(label))

    def __mul__(self, other: PauliOperator) -> PauliOperator:
        if self.n != other.n:
            raise ValueError("qubit counts differ")
        swap = sum(a & b for a, b in zip(self.z, other.x))
        return PauliOperator(
            tuple(a ^ b for a, b in zip(self.x, other.x)),
            tuple(a ^ b for a, b in zip(self.z, other.z)),
            self.phase + other.phase + 2 * swap,
        )

    def label(self) -> str:
        return "".join("IXZY"[a + 2 * b] for a, b in zip(self.x, self.z))

    def __str__(self) -> str:
        return f"{_PHASE_TEXT[self.phase].replace(' * ', '')}{self.label()}"


def weight(p: PauliOperator) -> int:
    return sum(1 for a, b in zip(p.x, p.z) if a or b)


def commutes(a: PauliOperator, b: PauliOperator) -> bool:
    sym = sum(x1 & z2 for x1, z2 in zip(a.x, b.z)) + sum(z1 & x2 for z1, x2 in zip(a.z, b.x))
    return sym % 2 == 0


# --- controlled-Pauli errors --------------------------------------------------


@dataclass(frozen=True)
class ErrorTerm:
    """``letter`` on ``target`` applied when every control reads 1.

    Z terms are symmetric in their qubits and are stored with the largest
    qubit as target.
    """

    letter: str
    target: Any
    controls: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.letter not in ("X", "Z"):
            raise ValueError(f"term letter must be X or Z, got {self.letter!r}")
        controls = frozenset(self.controls)
        if self.target in controls:
            raise ValueError("a term's target cannot be one of its controls")
        if self.letter == "Z" and controls:
            qubits = sorted(controls | {self.target})
            object.__setattr__(self, "target", qubits[-1])
            controls = frozenset(qubits[:-1])
        object.__setattr__(self, "controls", controls)

    @property
    def qubits(self) -> tuple:
        return (*sorted(self.controls), self.target)

    def __str__(self) -> str:
        ctrl = sorted(self.controls)
        if not ctrl:
            return f"{self.letter}[{self.target}]"
        prefix = "C" * len(ctrl) + self.letter
        if self.letter == "Z":
            return f"{prefix}[{', '.join(str(q) for q in self.qubits)}]"
        return f"{prefix}[{', '.join(str(q) for q in ctrl)} -> {self.target}]"


@dataclass(frozen=True)
class GeneralizedError:
    terms: tuple[ErrorTerm, ...] = ()
    phase: int = 0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "phase", self.phase % 4)

    @classmethod
    def identity(cls) -> GeneralizedError:
        return cls()

    @classmethod
    def pauli(cls, letter: str, qubit) -> GeneralizedError:
        """Single-qubit X, Y or Z. Y is ``i·X·Z`` (Z applied first)."""
        if letter == "Y":
            return cls((ErrorTerm("Z", qubit), ErrorTerm("X", qubit)), 1)
        if letter == "I":
            return cls()
        return cls((ErrorTerm(letter, qubit),))

    @property
    def is_identity(self) -> bool:
        return not self.terms and self.phase == 0

    def qubits(self) -> set:
        out = set()
        for t in self.terms:
            out |= set(t.qubits)
        return out

    def __str__(self) -> str:
        if not self.terms:
            return {0: "I", 1: "i", 2: "-I", 3: "-i"}[self.phase]
        return _PHASE_TEXT[self.phase] + " * ".join(str(t) for t in reversed(self.terms))


def _simplify(terms) -> tuple[ErrorTerm, ...]:
    out: list[ErrorTerm] = []
    for t in terms:
        if out and out[-1] == t:
            out.pop()
        else:
            out.append(t)
    return tuple(out)


def compose(a: GeneralizedError, b: GeneralizedError) -> GeneralizedError:
    """The error ``a·b``: ``b`` acts first."""
    return GeneralizedError(_simplify(b.terms + a.terms), a.phase + b.phase)


def inverse(a: GeneralizedError) -> GeneralizedError:
    return GeneralizedError(tuple(reversed(a.terms)), -a.phase)


def to_pauli(err: GeneralizedError, qubits: list) -> PauliOperator:
    """Collapse an uncontrolled error to a :class:`PauliOperator` over ``qubits``."""
    out = PauliOperator.identity(len(qubits))
    pos = {q: i for i, q in enumerate(qubits)}
    for t in err.terms:
        if t.controls:
            raise ValueError(f"{t} is not a Pauli")
        out = PauliOperator.single(len(qubits), pos[t.target], t.letter) * out
    return PauliOperator(out.x, out.z, out.phase + err.phase)


# --- conjugation through gates -----------------------------------------------

_SQ2 = 1 / np.sqrt(2)
_V = np.array([[1 - 1j, 1 + 1j], [1 + 1j, 1 - 1j]]) / 2
_ONE_QUBIT = {
    "H": np.array([[1, 1], [1, -1]]) * _SQ2,
    "X": np.array([[0, 1], [1, 0]]),
    "Z": np.diag([1, -1]),
}


def _bit(x: int, j: int) -> int:
    return (x >> j) & 1


def _dense_gate(kind: str, pos: tuple[int, ...], m: int) -> np.ndarray:
    dim = 1 << m
    if kind in _ONE_QUBIT:
        u = _ONE_QUBIT[kind]
        out = np.zeros((dim, dim), dtype=complex)
        j = pos[0]
        for x in range(dim):
            for b in (0, 1):
                y = (x & ~(1 << j)) | (b << j)
                out[y, x] += u[b, _bit(x, j)]
        return out
    if kind in ("CV", "CVdg"):
        u = _V if kind == "CV" else _V.conj().T
        c, t = pos
        out = np.zeros((dim, dim), dtype=complex)
        for x in range(dim):
            if not _bit(x, c):
                out[x, x] = 1
                continue
            for b in (0, 1):
                y = (x & ~(1 << t)) | (b << t)
                out[y, x] += u[b, _bit(x, t)]
        return out
    out = np.zeros((dim, dim), dtype=complex)
    *ctrl, t = pos
    for x in range(dim):
        on = all(_bit(x, c) for c in ctrl)
        if kind in ("CX", "CCX"):
            out[x ^ (on << t), x] = 1
        elif kind in ("CZ", "CCZ"):
            out[x, x] = -1 if on and _bit(x, t) else 1
        else:
            raise ValueError(f"no matrix for gate kind {kind!r}")
    return out


def _dense_term(letter: str, target: int, controls: tuple[int, ...], m: int) -> np.ndarray:
    kind = {("X", 0): "X", ("X", 1): "CX", ("X", 2): "CCX", ("Z", 0): "Z", ("Z", 1): "CZ", ("Z", 2): "CCZ"}
    try:
        k = kind[letter, len(controls)]
    except KeyError:
        raise ClosureFailure(f"terms with {len(controls)} controls are not supported") from None
    return _dense_gate(k, (*controls, target), m)


def _anf(table: np.ndarray) -> list[int]:
    """Monomials (as variable bitmasks) of a boolean function's algebraic normal form."""
    coeffs = table.astype(np.uint8).copy()
    m = int(np.log2(len(coeffs)))
    for j in range(m):
        step = 1 << j
        for x in range(len(coeffs)):
            if x & step:
                coeffs[x] ^= coeffs[x ^ step]
    return [x for x in range(len(coeffs)) if coeffs[x]]


def _mask_vars(mask: int) -> list[int]:
    return [j for j in range(mask.bit_length()) if (mask >> j) & 1]


_PHASES = {1: 0, 1j: 1, -1: 2, -1j: 3}


def _phase_power(z: complex) -> int:
    for value, power in _PHASES.items():
        if abs(z - value) < 1e-9:
            return power
    raise ClosureFailure(f"global phase {z} is not a power of i")


@lru_cache(maxsize=4096)
def _conjugate_local(
    gate_kind: str, gate_pos: tuple[int, ...], letter: str, target: int, controls: tuple[int, ...], m: int
) -> tuple[tuple[tuple[str, int, tuple[int, ...]], ...], int]:
    g = _dense_gate(gate_kind, gate_pos, m)
    e = _dense_term(letter, target, controls, m)
    mat = g @ e @ g.conj().T
    dim = 1 << m
    perm = np.empty(dim, dtype=np.int64)
    diag = np.empty(dim, dtype=complex)
    for col in range(dim):
        nz = np.flatnonzero(np.abs(mat[:, col]) > 1e-9)
        if len(nz) != 1 or abs(abs(mat[nz[0], col]) - 1) > 1e-9:
            raise ClosureFailure(f"{letter} term through {gate_kind} leaves the controlled-Pauli class")
        perm[col] = nz[0]
        diag[nz[0]] = mat[nz[0], col]
    terms: list[tuple[str, int, tuple[int, ...]]] = []
    flips = {}
    for j in range(m):
        f = np.array([_bit(int(perm[x]), j) ^ _bit(x, j) for x in range(dim)], dtype=np.uint8)
        if f.any():
            flips[j] = f
    for j, f in flips.items():
        for mono in _anf(f):
            vars_ = _mask_vars(mono)
            if any(v in flips for v in vars_):
                raise ClosureFailure("flip conditions depend on flipped qubits")
            if len(vars_) > 2:
                raise ClosureFailure("conjugated term needs more than two controls")
            terms.append(("X", j, tuple(vars_)))
    g0 = diag[0]
    ratio = diag / g0
    if not np.all(np.isclose(ratio, 1) | np.isclose(ratio, -1)):
        raise ClosureFailure("conjugated phase is not a +-1 function")
    phase = _phase_power(g0)
    for mono in _anf(np.isclose(ratio, -1)):
        vars_ = _mask_vars(mono)
        if not vars_:
            phase += 2
            continue
        if len(vars_) > 3:
            raise ClosureFailure("conjugated phase needs more than two controls")
        terms.append(("Z", vars_[-1], tuple(vars_[:-1])))
    return tuple(terms), phase % 4


def _conjugate_term(term: ErrorTerm, gate: Gate) -> GeneralizedError:
    if not set(term.qubits) & set(gate.qubits):
        return GeneralizedError((term,))
    local = list(gate.qubits) + sorted(set(term.qubits) - set(gate.qubits))
    pos = {q: i for i, q in enumerate(local)}
    terms, phase = _conjugate_local(
        gate.kind,
        tuple(pos[q] for q in gate.qubits),
        term.letter,
        pos[term.target],
        tuple(sorted(pos[c] for c in term.controls)),
        len(local),
    )
    return GeneralizedError(
        tuple(ErrorTerm(l, local[t], frozenset(local[c] for c in cs)) for l, t, cs in terms), phase
    )


def conjugate_through_gate(err: GeneralizedError, gate: Gate) -> GeneralizedError:
    """``G·err·G†``: the error seen after ``gate`` when ``err`` struck before it.

    Raises:
        ClosureFailure: the result is not a product of X/Z terms with at most
            two controls.
    """
    if not gate.is_unitary:
        raise ValueError(f"cannot conjugate through {gate.kind}")
    out = GeneralizedError((), err.phase)
    for t in err.terms:
        c = _conjugate_term(t, gate)
        out = GeneralizedError(out.terms + c.terms, out.phase + c.phase)
    return GeneralizedError(_simplify(out.terms), out.phase)


# --- notation -----------------------------------------------------------------

_TERM_RE = re.compile(r"^(C{0,2})([XZ])(bar)?\[(.*)\]$")


def _parse_qubit(text: str):
    return QubitId.parse(text)


def parse_error(text: str, code: CssCode | None = None) -> GeneralizedError:
    """Parse the notation produced by ``str(GeneralizedError)``.

    ``Xbar[REG]`` / ``Zbar[REG]`` expand to the code's logical representative
    on register ``REG`` and require ``code``.
    """
    text = text.strip()
    bare = {"I": 0, "": 0, "i": 1, "-I": 2, "-i": 3}
    if text in bare:
        return GeneralizedError((), bare[text])
    phase = 0
    for prefix, p in (("-i *", 3), ("i *", 1), ("-", 2)):
        if text.startswith(prefix):
            phase = p
            text = text[len(prefix) :].strip()
            break
    factors = [f.strip() for f in text.split("*")]
    terms: list[ErrorTerm] = []
    for f in reversed(factors):
        m = _TERM_RE.match(f)
        if not m:
            raise NotationError(f"bad error term {f!r}")
        nctrl, letter, bar, body = len(m.group(1)), m.group(2), m.group(3), m.group(4)
        if bar:
            if code is None:
                raise NotationError("logical operators need a code")
            support = code.logical_x if letter == "X" else code.logical_z
            terms += [ErrorTerm(letter, QubitId(body.strip(), i)) for i, b in enumerate(support) if b]
            continue
        if "->" in body:
            ctrl_text, tgt_text = body.split("->")
            controls = [_parse_qubit(q) for q in ctrl_text.split(",")]
            target = _parse_qubit(tgt_text)
        else:
            qs = [_parse_qubit(q) for q in body.split(",")]
            if letter == "X" and len(qs) > 1:
                raise NotationError(f"controlled X needs '->' in {f!r}")
            controls, target = qs[:-1], qs[-1]
        if len(controls) != nctrl:
            raise NotationError(f"{f!r}: control count does not match prefix")
        terms.append(ErrorTerm(letter, target, frozenset(controls)))
    return GeneralizedError(tuple(terms), phase)
