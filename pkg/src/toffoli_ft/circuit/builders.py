"""Builders for the ancilla-preparation, error-correction and Toffoli circuits.

Register naming:

* ``T1``-``T3``: Toffoli ancilla blocks (pre-loaded in logical |+>)
* ``A<r>``: cat register of parity round ``r``; ``VA<r>`` its verification qubits
* ``S<tag>r<rep>c<k>``: cat for check ``k`` of syndrome repetition ``rep``;
  ``V<tag>r<rep>c<k>`` its verification qubit
* ``D1``-``D3``: data blocks of the logical Toffoli
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import TYPE_CHECKING

from . import expr as E
from .ir import Circuit, Gate, InvalidRounds, QubitId

if TYPE_CHECKING:
    from ..css_code import CssCode

# Verification pairs (Z_a Z_b parity checks) of the verified cat preparations.
# Each catches every X pattern of weight >= 2 (modulo the all-ones flip) that a
# single fault in the matching fan-out can leave behind.
CAT_FANOUT = {
    4: [[(0, 1)], [(0, 2), (1, 3)]],
    7: [[(0, 1)], [(0, 2), (1, 3)], [(0, 4), (1, 5), (2, 6)]],
}
CAT_CHECKS = {4: [(0, 3)], 7: [(0, 3), (1, 2)]}


class _Builder:
    def __init__(self, name: str):
        self.name = name
        self.registers: dict[str, int] = {}
        self.initial: dict[str, str] = {}
        self.gates: list[Gate] = []
        self.floor = 0
        self.qubit_ts: dict[QubitId, int] = {}
        self.bit_ts: dict[str, int] = {}
        self.max_ts = -1

    def register(self, name: str, size: int, init: str | None = None) -> list[QubitId]:
        self.registers.setdefault(name, size)
        if init:
            self.initial[name] = init
        return [QubitId(name, i) for i in range(size)]

    def stage(self) -> None:
        """Later gates start strictly after everything added so far."""
        self.floor = self.max_ts + 1

    def add(self, kind, *qubits, bit=None, expr=None, cond=None, postselect=False) -> Gate:
        ts = self.floor
        for q in qubits:
            ts = max(ts, self.qubit_ts.get(q, -1) + 1)
        if expr is not None:
            for b in expr.bits():
                ts = max(ts, self.bit_ts[b])
        if cond is not None:
            for b in cond.bits():
                ts = max(ts, self.bit_ts[b] + 1)
        if bit is not None and bit in self.bit_ts:
            ts = max(ts, self.bit_ts[bit])
        gate = Gate(kind, tuple(qubits), ts, bit=bit, expr=expr, condition=cond, postselect=postselect)
        gate.check()
        self.gates.append(gate)
        for q in qubits:
            self.qubit_ts[q] = ts
        if bit is not None:
            self.bit_ts[bit] = ts
        self.max_ts = max(self.max_ts, ts)
        return gate

    def let(self, bit: str, expr: E.Expr, cond=None) -> None:
        self.add("Let", bit=bit, expr=expr, cond=cond)

    def build(self, outputs: Sequence[str] = (), rounds: int = 0) -> Circuit:
        remap = {t: i for i, t in enumerate(sorted({g.timestep for g in self.gates}))}
        gates = tuple(
            Gate(g.kind, g.qubits, remap[g.timestep], g.bit, g.expr, g.condition, g.postselect) for g in self.gates
        )
        c = Circuit(self.name, dict(self.registers), gates, dict(self.initial), tuple(outputs), rounds)
        c.validate()
        return c


# --- sub-circuits -------------------------------------------------------------


def _cat(b: _Builder, reg: str, size: int, cond=None) -> list[QubitId]:
    """Verified |0...0> + |1...1> on a fresh register."""
    qs = b.register(reg, size)
    b.add("H", qs[0], cond=cond)
    if size in CAT_FANOUT:
        for layer in CAT_FANOUT[size]:
            for c, t in layer:
                b.add("CX", qs[c], qs[t], cond=cond)
        vs = b.register(f"V{reg}", len(CAT_CHECKS[size]))
        for v, (i, j) in zip(vs, CAT_CHECKS[size]):
            b.add("CX", qs[i], v, cond=cond)
            b.add("CX", qs[j], v, cond=cond)
            b.add("MeasureZ", v, bit=f"v.{v}", postselect=True, cond=cond)
    else:
        for t in range(1, size):
            b.add("CX", qs[t - 1], qs[t], cond=cond)
    return qs


def _parity_expr(bits: Sequence[str]) -> E.Expr:
    return E.xor(*bits) if len(bits) > 1 else E.bit(bits[0])


def _measure_parity(b: _Builder, qs: Sequence[QubitId], kind: str, prefix: str, target: str, cond=None) -> None:
    """Measure each qubit and fold its outcome into ``target`` right away."""
    for j, q in enumerate(qs):
        m = f"{prefix}.{j}"
        b.add(kind, q, bit=m, cond=cond)
        b.let(target, E.bit(m) if j == 0 else E.xor(target, m), cond=cond)


def _syndrome_matches(fbits: Sequence[str], column: Sequence[int]) -> E.Expr:
    return E.and_(*(E.bit(f) if c else E.not_(f) for f, c in zip(fbits, column)))


def _extract_checks(b, code, block, tag, rep, checks, phase: bool, cond=None) -> list[str]:
    """One Shor-style extraction of every row of ``checks`` on ``block``."""
    data = [QubitId(block, i) for i in range(code.n)]
    out = []
    for k, row in enumerate(checks):
        support = [i for i, v in enumerate(row) if v]
        b.stage()
        reg = f"S{tag}r{rep}c{k}"
        cat = _cat(b, reg, len(support), cond=cond)
        b.stage()
        s = f"s.{tag}.{rep}.{k}"
        if phase:
            for a, i in zip(cat, support):
                b.add("CX", a, data[i], cond=cond)
            _measure_parity(b, cat, "MeasureX", f"m.{reg}", s, cond=cond)
        else:
            for a in cat:
                b.add("H", a, cond=cond)
            for a, i in zip(cat, support):
                b.add("CX", data[i], a, cond=cond)
            _measure_parity(b, cat, "MeasureZ", f"m.{reg}", s, cond=cond)
        out.append(s)
    return out


def _ec_half(b, code, block, tag, syndrome_rounds, phase: bool) -> None:
    checks = code.h_x if phase else code.h_z
    if len(checks) == 0:
        return
    reps = [_extract_checks(b, code, block, tag, r, checks, phase) for r in range(1, syndrome_rounds + 1)]
    final = reps[-1]
    if syndrome_rounds >= 2:
        prev, last = reps[-2], reps[-1]
        agree = f"agree.{tag}"
        b.let(agree, E.not_(E.or_(*(E.xor(p, q) for p, q in zip(prev, last)))))
        extra = _extract_checks(b, code, block, tag, syndrome_rounds + 1, checks, phase, cond=E.not_(agree))
        final = []
        for k, (s_last, s_extra) in enumerate(zip(last, extra)):
            f = f"f.{tag}.{k}"
            b.let(f, E.or_(E.and_(agree, s_last), E.and_(E.not_(agree), s_extra)))
            final.append(f)
    b.stage()
    letter = "Z" if phase else "X"
    for i in range(code.n):
        column = [int(row[i]) for row in checks]
        if any(column):
            b.add(letter, QubitId(block, i), cond=_syndrome_matches(final, column))


def _bfec(b, code, block, tag, syndrome_rounds=2) -> None:
    _ec_half(b, code, block, tag, syndrome_rounds, phase=False)


def _pfec(b, code, block, tag, syndrome_rounds=2) -> None:
    _ec_half(b, code, block, tag, syndrome_rounds, phase=True)


def _check_rounds(rounds: int) -> None:
    if rounds < 1:
        raise InvalidRounds(f"rounds must be >= 1, got {rounds}")
    if rounds % 2 == 0:
        raise InvalidRounds(f"majority vote needs an odd number of rounds, got {rounds}")


def _prep(b: _Builder, code, rounds: int, bfec: bool, insert_pfec: bool, syndrome_rounds: int) -> None:
    blocks = {name: b.register(name, code.n, init="plus") for name in ("T1", "T2", "T3")}
    t1, t2, t3 = blocks["T1"], blocks["T2"], blocks["T3"]
    parities = []
    for r in range(1, rounds + 1):
        b.stage()
        a = _cat(b, f"A{r}", code.n)
        b.stage()
        for q in a:
            b.add("H", q)
        for c, q in zip(t3, a):
            b.add("CX", c, q)
        for c1, c2, q in zip(t1, t2, a):
            b.add("CCX", c1, c2, q)
        p = f"p{r}"
        _measure_parity(b, a, "MeasureZ", f"a{r}", p)
        parities.append(p)
        if r < rounds and bfec:
            for name in ("T1", "T2", "T3"):
                _bfec(b, code, name, f"{r}{name}", syndrome_rounds)
            if insert_pfec:
                for name in ("T1", "T2", "T3"):
                    _pfec(b, code, name, f"P{r}{name}", syndrome_rounds)
    b.let("maj", E.maj(*parities))
    b.stage()
    for i, v in enumerate(code.logical_x):
        if v:
            b.add("X", t3[i], cond=E.bit("maj"))


def _default_rounds(code) -> int:
    return 2 * code.t + 1


# --- public builders ----------------------------------------------------------


def build_shor_prep(code: CssCode, rounds: int | None = None) -> Circuit:
    """Shor's Toffoli-ancilla preparation: parity rounds and a majority-controlled X on T3."""
    rounds = _default_rounds(code) if rounds is None else rounds
    _check_rounds(rounds)
    b = _Builder(f"shor_prep_{code.name}_r{rounds}")
    _prep(b, code, rounds, bfec=False, insert_pfec=False, syndrome_rounds=2)
    return b.build(outputs=("T1", "T2", "T3"), rounds=rounds)


def build_modified_prep(
    code: CssCode, rounds: int | None = None, insert_pfec: bool = False, syndrome_rounds: int = 2
) -> Circuit:
    """Shor's preparation with bit-flip correction on T1-T3 between rounds."""
    rounds = _default_rounds(code) if rounds is None else rounds
    _check_rounds(rounds)
    suffix = "_pfec" if insert_pfec else ""
    b = _Builder(f"modified_prep_{code.name}_r{rounds}{suffix}")
    _prep(b, code, rounds, bfec=True, insert_pfec=insert_pfec, syndrome_rounds=syndrome_rounds)
    return b.build(outputs=("T1", "T2", "T3"), rounds=rounds)


def build_cat_prep(size: int) -> Circuit:
    if size not in CAT_FANOUT:
        raise ValueError(f"cat size must be 4 or 7, got {size}")
    reg = "A" if size == 7 else "S"
    b = _Builder(f"cat{size}")
    _cat(b, reg, size)
    return b.build(outputs=(reg,))


def build_bfec(code: CssCode, target_block: str = "D1", syndrome_rounds: int = 2, init: str = "zero") -> Circuit:
    b = _Builder(f"bfec_{code.name}_{target_block}")
    b.register(target_block, code.n, init=init)
    _bfec(b, code, target_block, target_block, syndrome_rounds)
    return b.build(outputs=(target_block,))


def build_pfec(code: CssCode, target_block: str = "D1", syndrome_rounds: int = 2, init: str = "zero") -> Circuit:
    b = _Builder(f"pfec_{code.name}_{target_block}")
    b.register(target_block, code.n, init=init)
    _pfec(b, code, target_block, target_block, syndrome_rounds)
    return b.build(outputs=(target_block,))


def logical_readout(bits: Sequence[str], checks, support: Sequence[int]) -> E.Expr:
    """Decoded logical value of a transversal measurement.

    Parity of the outcomes on the logical representative's ``support``,
    flipped when the lookup correction lands on that support.
    """
    raw = _parity_expr([bits[i] for i in support])
    if len(checks) == 0:
        return raw
    syn = [_parity_expr([bits[i] for i, v in enumerate(row) if v]) for row in checks]
    hits = []
    for i in support:
        column = [int(row[i]) for row in checks]
        hits.append(E.and_(*(s if c else E.not_(s) for s, c in zip(syn, column))))
    return E.xor(raw, E.or_(*hits))


def build_full_toffoli(
    code: CssCode,
    data: Sequence[str] = ("zero", "zero", "zero"),
    rounds: int | None = None,
    syndrome_rounds: int = 2,
) -> Circuit:
    """Logical Toffoli on D1-D3 by teleportation through the prepared ancilla.

    The result emerges on T1-T3. Data outcomes m1, m2 (Z basis) and m3
    (X basis) drive the corrections::

        m3: Z(T3), CZ(T1,T2)
        m1: X(T1), CX(T2->T3)
        m2: CX(T1->T3), X(T2)
    """
    rounds = _default_rounds(code) if rounds is None else rounds
    _check_rounds(rounds)
    b = _Builder(f"full_toffoli_{code.name}")
    _prep(b, code, rounds, bfec=True, insert_pfec=False, syndrome_rounds=syndrome_rounds)
    t = [[QubitId(f"T{j}", i) for i in range(code.n)] for j in (1, 2, 3)]
    for j in (1, 2, 3):
        _bfec(b, code, f"T{j}", f"E{j}", syndrome_rounds)
        _pfec(b, code, f"T{j}", f"EP{j}", syndrome_rounds)
    for j, label in zip((1, 2, 3), data):
        d = b.register(f"D{j}", code.n, init=label)
        _bfec(b, code, f"D{j}", f"ED{j}", syndrome_rounds)
        _pfec(b, code, f"D{j}", f"EPD{j}", syndrome_rounds)
        b.stage()
        if j < 3:
            for c, q in zip(t[j - 1], d):
                b.add("CX", c, q)
            kind, checks, support = "MeasureZ", code.h_z, code.logical_z
        else:
            for c, q in zip(d, t[2]):
                b.add("CX", c, q)
            kind, checks, support = "MeasureX", code.h_x, code.logical_x
        bits = [f"d{j}.{i}" for i in range(code.n)]
        for q, m in zip(d, bits):
            b.add(kind, q, bit=m)
        b.let(f"m{j}", logical_readout(bits, checks, [i for i, v in enumerate(support) if v]))
    m1, m2, m3 = E.bit("m1"), E.bit("m2"), E.bit("m3")
    b.stage()
    for i, v in enumerate(code.logical_z):
        if v:
            b.add("Z", t[2][i], cond=m3)
    for q1, q2 in zip(t[0], t[1]):
        b.add("CZ", q1, q2, cond=m3)
    b.stage()
    for i, v in enumerate(code.logical_x):
        if v:
            b.add("X", t[0][i], cond=m1)
    for q2, q3 in zip(t[1], t[2]):
        b.add("CX", q2, q3, cond=m1)
    b.stage()
    for q1, q3 in zip(t[0], t[2]):
        b.add("CX", q1, q3, cond=m2)
    for i, v in enumerate(code.logical_x):
        if v:
            b.add("X", t[1][i], cond=m2)
    for j in (1, 2, 3):
        _bfec(b, code, f"T{j}", f"F{j}", syndrome_rounds)
        _pfec(b, code, f"T{j}", f"FP{j}", syndrome_rounds)
    return b.build(outputs=("T1", "T2", "T3"), rounds=rounds)


def build_toffoli_decomposition() -> Circuit:
    """Toffoli on Q0, Q1 -> Q2 from controlled-V, controlled-V† and CNOT (V² = X)."""
    b = _Builder("toffoli_decomposition")
    q0, q1, q2 = b.register("Q", 3)
    b.add("CV", q1, q2)
    b.add("CX", q0, q1)
    b.add("CVdg", q1, q2)
    b.add("CX", q0, q1)
    b.add("CV", q0, q2)
    return b.build(outputs=("Q",))
