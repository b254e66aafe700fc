"""CSS codes with one logical qubit, and the Steane code."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .pauli_algebra import PauliOperator, commutes, weight


class UnknownSyndrome(KeyError):
    pass


class NotInNormalizer(ValueError):
    pass


class CodeFileError(ValueError):
    pass


def gf2_rank(rows: np.ndarray) -> int:
    m = np.array(rows, dtype=np.uint8) % 2
    if m.size == 0:
        return 0
    rank = 0
    for col in range(m.shape[1]):
        pivot = next((r for r in range(rank, m.shape[0]) if m[r, col]), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(m.shape[0]):
            if r != rank and m[r, col]:
                m[r] ^= m[rank]
        rank += 1
        if rank == m.shape[0]:
            break
    return rank


def in_rowspace(vec, rows: np.ndarray) -> bool:
    rows = np.atleast_2d(np.array(rows, dtype=np.uint8))
    if rows.size == 0:
        return not np.any(vec)
    return gf2_rank(np.vstack([rows, vec])) == gf2_rank(rows)


def rowspace(rows: np.ndarray) -> list[tuple[int, ...]]:
    rows = np.array(rows, dtype=np.uint8)
    n = rows.shape[1]
    out = set()
    for coeffs in itertools.product((0, 1), repeat=rows.shape[0]):
        v = np.zeros(n, dtype=np.uint8)
        for c, r in zip(coeffs, rows):
            if c:
                v ^= r
        out.add(tuple(int(b) for b in v))
    return sorted(out)


@dataclass(frozen=True)
class Syndrome:
    """``x_bits`` flag bit flips (Z checks); ``z_bits`` flag phase flips (X checks)."""

    x_bits: tuple[int, ...]
    z_bits: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class CssCode:
    name: str
    h_x: np.ndarray
    h_z: np.ndarray
    logical_x: tuple[int, ...]
    logical_z: tuple[int, ...]
    d: int

    @property
    def n(self) -> int:
        return len(self.logical_x)

    @property
    def k(self) -> int:
        return self.n - gf2_rank(self.h_x) - gf2_rank(self.h_z)

    @property
    def t(self) -> int:
        return (self.d - 1) // 2

    def stabilizers(self) -> list[PauliOperator]:
        zeros = (0,) * self.n
        return [PauliOperator(tuple(r), zeros) for r in self.h_x] + [PauliOperator(zeros, tuple(r)) for r in self.h_z]

    @cached_property
    def decode_table(self) -> dict[Syndrome, PauliOperator]:
        """Minimum-weight correction for every reachable syndrome (ties: lowest qubit index)."""
        x_part = _min_weight_table(self.h_z, self.n)
        z_part = _min_weight_table(self.h_x, self.n)
        return {
            Syndrome(sx, sz): PauliOperator(ex, ez) for (sx, ex), (sz, ez) in itertools.product(x_part.items(), z_part.items())
        }

    def codewords(self, value: int) -> list[tuple[int, ...]]:
        """Computational-basis support of the logical |value>."""
        base = rowspace(self.h_x) if len(self.h_x) else [(0,) * self.n]
        if value:
            return sorted(tuple(a ^ b for a, b in zip(w, self.logical_x)) for w in base)
        return base


def _min_weight_table(checks: np.ndarray, n: int) -> dict[tuple[int, ...], tuple[int, ...]]:
    checks = np.array(checks, dtype=np.uint8).reshape(-1, n)
    reachable = 1 << gf2_rank(checks) if checks.size else 1
    table: dict[tuple[int, ...], tuple[int, ...]] = {}
    for w in range(n + 1):
        for support in itertools.combinations(range(n), w):
            e = np.zeros(n, dtype=np.uint8)
            e[list(support)] = 1
            s = tuple(int(b) for b in (checks @ e) % 2)
            table.setdefault(s, tuple(int(b) for b in e))
        if len(table) == reachable:
            break
    return table


HAMMING_7_4 = np.array(
    [
        [0, 0, 0, 1, 1, 1, 1],
        [0, 1, 1, 0, 0, 1, 1],
        [1, 0, 1, 0, 1, 0, 1],
    ],
    dtype=np.uint8,
)


def _min_logical(stab_rows: np.ndarray, other_checks: np.ndarray, n: int) -> tuple[int, ...]:
    """Lexicographically smallest minimum-weight vector in ker(other_checks) outside rowspace(stab_rows)."""
    for w in range(1, n + 1):
        cands = []
        for support in itertools.combinations(range(n), w):
            v = np.zeros(n, dtype=np.uint8)
            v[list(support)] = 1
            if other_checks.size and np.any(other_checks @ v % 2):
                continue
            if in_rowspace(v, stab_rows):
                continue
            cands.append(tuple(int(b) for b in v))
        if cands:
            return min(cands)
    raise ValueError("code has no logical operator")


def _distance(h_x: np.ndarray, h_z: np.ndarray, n: int) -> int:
    best = n
    for stabs, checks in ((h_x, h_z), (h_z, h_x)):
        best = min(best, sum(_min_logical(stabs, checks, n)))
    return best


def make_code(name: str, h_x, h_z, logical_x=None, logical_z=None, d: int | None = None) -> CssCode:
    h_x = np.array(h_x, dtype=np.uint8)
    h_z = np.array(h_z, dtype=np.uint8)
    n = h_x.shape[1] if h_x.ndim == 2 and h_x.size else h_z.shape[1]
    h_x = h_x.reshape(-1, n)
    h_z = h_z.reshape(-1, n)
    lx = tuple(logical_x) if logical_x is not None else _min_logical(h_x, h_z, n)
    lz = tuple(logical_z) if logical_z is not None else _min_logical(h_z, h_x, n)
    return CssCode(name, h_x, h_z, lx, lz, d if d is not None else _distance(h_x, h_z, n))


def steane() -> CssCode:
    """The [[7,1,3]] code: Hamming(7,4) checks for both X and Z."""
    return make_code("steane", HAMMING_7_4, HAMMING_7_4)


def unencoded() -> CssCode:
    """The trivial [[1,1,1]] 'code', used to run the circuits on bare qubits."""
    return CssCode("unencoded", np.zeros((0, 1), np.uint8), np.zeros((0, 1), np.uint8), (1,), (1,), 1)


def validate_css(code: CssCode) -> bool:
    if np.any(code.h_x.astype(int) @ code.h_z.T.astype(int) % 2):
        return False
    lx = PauliOperator(code.logical_x, (0,) * code.n)
    lz = PauliOperator((0,) * code.n, code.logical_z)
    if commutes(lx, lz):
        return False
    return all(commutes(s, lx) and commutes(s, lz) for s in code.stabilizers())


def validate_family(code: CssCode) -> bool:
    """Even-weight stabilizer generators and odd-weight logical operators."""
    rows = [*code.h_x, *code.h_z]
    if any(int(np.sum(r)) % 2 for r in rows):
        return False
    return sum(code.logical_x) % 2 == 1 and sum(code.logical_z) % 2 == 1


def syndrome(code: CssCode, err: PauliOperator) -> Syndrome:
    x = np.array(err.x, dtype=np.uint8)
    z = np.array(err.z, dtype=np.uint8)
    return Syndrome(
        tuple(int(b) for b in code.h_z @ x % 2),
        tuple(int(b) for b in code.h_x @ z % 2),
    )


def decode(code: CssCode, s: Syndrome) -> PauliOperator:
    try:
        return code.decode_table[s]
    except KeyError:
        raise UnknownSyndrome(s) from None


def logical_effect(code: CssCode, residual: PauliOperator) -> str:
    """Coset of ``residual`` modulo the stabilizer group: ``I``, ``X``, ``Z`` or ``Y``."""
    s = syndrome(code, residual)
    if any(s.x_bits) or any(s.z_bits):
        raise NotInNormalizer(f"{residual} anticommutes with a stabilizer")
    has_x = not in_rowspace(np.array(residual.x, np.uint8), code.h_x)
    has_z = not in_rowspace(np.array(residual.z, np.uint8), code.h_z)
    return {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}[has_x, has_z]


def correct(code: CssCode, err: PauliOperator) -> PauliOperator:
    """Residual after lookup decoding of ``err``."""
    return decode(code, syndrome(code, err)) * err


def load_code(path: str | Path, name: str | None = None) -> CssCode:
    """Read a code from a text file of ``[hx]``, ``[hz]`` and optional
    ``[logical_x]``/``[logical_z]`` sections, each a list of 0/1 rows."""
    sections: dict[str, list[list[int]]] = {}
    current = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections[current] = []
            continue
        if current is None or set(line) - {"0", "1"}:
            raise CodeFileError(f"{path}:{lineno}: expected a row of 0/1 characters")
        sections[current].append([int(c) for c in line])
    if "hx" not in sections or "hz" not in sections:
        raise CodeFileError(f"{path}: needs [hx] and [hz] sections")
    lx = sections.get("logical_x", [None])[0]
    lz = sections.get("logical_z", [None])[0]
    return make_code(name or Path(path).stem, sections["hx"], sections["hz"], lx, lz)


__all__ = [
    "CssCode",
    "Syndrome",
    "UnknownSyndrome",
    "NotInNormalizer",
    "steane",
    "unencoded",
    "make_code",
    "load_code",
    "validate_family",
    "validate_css",
    "syndrome",
    "decode",
    "logical_effect",
    "correct",
    "weight",
]
