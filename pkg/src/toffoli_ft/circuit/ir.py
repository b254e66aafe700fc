"""Gate-level intermediate representation with named registers."""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

from .expr import Expr

UNITARY_ARITY = {
    "H": 1,
    "X": 1,
    "Z": 1,
    "CX": 2,
    "CZ": 2,
    "CV": 2,
    "CVdg": 2,
    "CCX": 3,
    "CCZ": 3,
}
MEASUREMENTS = ("MeasureZ", "MeasureX")
GATE_KINDS = (*UNITARY_ARITY, *MEASUREMENTS, "Let", "Barrier")

_QUBIT_RE = re.compile(r"^([A-Za-z][A-Za-z0-9_]*)\.(\d+)$")


class CircuitError(ValueError):
    pass


class InvalidRounds(CircuitError):
    pass


class QubitId(NamedTuple):
    register: str
    index: int

    def __str__(self) -> str:
        return f"{self.register}.{self.index}"

    @classmethod
    def parse(cls, text: str) -> QubitId:
        m = _QUBIT_RE.match(text.strip())
        if not m:
            raise CircuitError(f"bad qubit id {text!r}")
        return cls(m.group(1), int(m.group(2)))


@dataclass(frozen=True)
class Gate:
    """One instruction.

    Measurements write ``bit``; ``postselect`` marks verification
    measurements whose outcome must be 0. ``Let`` assigns ``expr`` to ``bit``
    and touches no qubits. Any gate may carry a classical ``condition``.
    """

    kind: str
    qubits: tuple[QubitId, ...]
    timestep: int
    bit: str | None = None
    expr: Expr | None = None
    condition: Expr | None = None
    postselect: bool = False

    @property
    def is_unitary(self) -> bool:
        return self.kind in UNITARY_ARITY

    @property
    def is_measurement(self) -> bool:
        return self.kind in MEASUREMENTS

    def reads(self) -> set[str]:
        out = set()
        if self.expr is not None:
            out |= self.expr.bits()
        if self.condition is not None:
            out |= self.condition.bits()
        return out

    def check(self) -> None:
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        if self.kind in UNITARY_ARITY and len(self.qubits) != UNITARY_ARITY[self.kind]:
            raise CircuitError(f"{self.kind} takes {UNITARY_ARITY[self.kind]} operands, got {len(self.qubits)}")
        if self.is_measurement and (len(self.qubits) != 1 or not self.bit):
            raise CircuitError(f"{self.kind} needs one qubit and an output bit")
        if self.kind == "Let" and (self.qubits or not self.bit or self.expr is None):
            raise CircuitError("Let needs a target bit, an expression and no qubits")
        if len(set(self.qubits)) != len(self.qubits):
            raise CircuitError(f"repeated operand in {self.kind} {self.qubits}")
        if self.timestep < 0:
            raise CircuitError("negative timestep")


class FaultLocation(NamedTuple):
    timestep: int
    qubit: QubitId
    position: str  # "before" | "after"


@dataclass(frozen=True)
class Circuit:
    """Timestep-ordered gates over named registers.

    ``initial`` names the logical state each pre-loaded register starts in
    (``plus``, ``zero``, ``one``, ``minus``); other qubits start in |0> when
    first touched. ``outputs`` are the registers whose final state is judged.
    """

    name: str
    registers: dict[str, int]
    gates: tuple[Gate, ...]
    initial: dict[str, str] = field(default_factory=dict)
    outputs: tuple[str, ...] = ()
    rounds: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(sorted(self.gates, key=lambda g: g.timestep)))

    def __hash__(self) -> int:
        return id(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Circuit):
            return NotImplemented
        return (
            self.name == other.name
            and self.registers == other.registers
            and self.gates == other.gates
            and self.initial == other.initial
            and self.outputs == other.outputs
            and self.rounds == other.rounds
        )

    @property
    def num_timesteps(self) -> int:
        return 1 + max((g.timestep for g in self.gates), default=-1)

    @cached_property
    def classical_bits(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for g in self.gates:
            if g.bit:
                seen.setdefault(g.bit)
        return tuple(seen)

    def register_qubits(self, register: str) -> list[QubitId]:
        return [QubitId(register, i) for i in range(self.registers[register])]

    @cached_property
    def gates_on(self) -> dict[QubitId, list[int]]:
        """Gate indices touching each qubit, in timestep order."""
        out: dict[QubitId, list[int]] = defaultdict(list)
        for i, g in enumerate(self.gates):
            for q in g.qubits:
                out[q].append(i)
        return dict(out)

    def validate(self) -> None:
        for g in self.gates:
            g.check()
            for q in g.qubits:
                if q.register not in self.registers or not 0 <= q.index < self.registers[q.register]:
                    raise CircuitError(f"qubit {q} outside the register layout")
        for reg in (*self.initial, *self.outputs):
            if reg not in self.registers:
                raise CircuitError(f"unknown register {reg!r}")
        if self.gates and {g.timestep for g in self.gates} != set(range(self.num_timesteps)):
            raise CircuitError("timesteps are not contiguous from 0")
        busy: dict[int, set[QubitId]] = defaultdict(set)
        for g in self.gates:
            if busy[g.timestep] & set(g.qubits):
                raise CircuitError(f"qubit reused within timestep {g.timestep}")
            busy[g.timestep] |= set(g.qubits)
        written: dict[str, int] = {}
        for g in self.gates:
            if g.expr is not None:
                for b in g.expr.bits():
                    if b not in written or written[b] > g.timestep:
                        raise CircuitError(f"Let {g.bit} reads {b} before it is written")
            if g.condition is not None:
                for b in g.condition.bits():
                    if b not in written or written[b] >= g.timestep:
                        raise CircuitError(f"condition at timestep {g.timestep} reads {b} too early")
            if g.bit:
                written.setdefault(g.bit, g.timestep)
        dead: set[QubitId] = set()
        for g in self.gates:
            if dead & set(g.qubits):
                raise CircuitError(f"{g.kind} acts on a measured qubit")
            if g.is_measurement and g.condition is None:
                dead |= set(g.qubits)

    # --- fault locations -------------------------------------------------

    def live_span(self, q: QubitId) -> tuple[int, int, bool]:
        """(first, last) timesteps during which ``q`` holds a state, and
        whether its last gate is a measurement."""
        idx = self.gates_on.get(q, [])
        preloaded = q.register in self.initial
        first = 0 if preloaded else (self.gates[idx[0]].timestep if idx else 0)
        if not idx:
            return first, self.num_timesteps - 1, False
        last_gate = self.gates[idx[-1]]
        if last_gate.is_measurement:
            return first, last_gate.timestep, True
        last = self.num_timesteps - 1 if (preloaded or q.register in self.outputs) else last_gate.timestep
        return first, last, False

    def all_qubits(self) -> list[QubitId]:
        return [QubitId(r, i) for r, n in self.registers.items() for i in range(n)]

    def live_qubits(self) -> list[QubitId]:
        return [q for q in self.all_qubits() if q in self.gates_on or q.register in self.initial]

    def gate_position(self, loc: FaultLocation) -> int:
        """Number of the qubit's gates that precede a fault at ``loc``."""
        idx = self.gates_on.get(loc.qubit, [])
        ts = [self.gates[i].timestep for i in idx]
        if loc.position == "before":
            return sum(1 for t in ts if t < loc.timestep)
        return sum(1 for t in ts if t <= loc.timestep)

    # --- simulation order --------------------------------------------------

    @cached_property
    def simulation_order(self) -> tuple[int, ...]:
        return simulation_order(self)


def locations(c: Circuit) -> list[FaultLocation]:
    """Every (timestep, qubit, before/after) where a live qubit can be hit.

    A qubit is live from its first gate (timestep 0 for pre-loaded registers)
    until its measurement or the end of the circuit; the slot after a
    measurement is not a location.
    """
    out = []
    for q in c.live_qubits():
        first, last, measured = c.live_span(q)
        for t in range(first, last + 1):
            out.append(FaultLocation(t, q, "before"))
            if not (measured and t == last):
                out.append(FaultLocation(t, q, "after"))
    out.sort(key=lambda loc: (loc.timestep, loc.qubit.register, loc.qubit.index, loc.position != "before"))
    return out


WINDOW = 4
_SPREADING = {"H", "CV", "CVdg"}


def simulation_order(c: Circuit, window: int = WINDOW) -> tuple[int, ...]:
    """A dependency-respecting gate order that keeps the sparse support small.

    Gates on a shared qubit or a shared classical bit keep their relative
    order. Among ready gates within ``window`` timesteps of the earliest
    pending one, measurements and Lets go first, then gates that cannot
    grow the support, then the gate whose operands have the fewest
    remaining gates, so each ancilla qubit is driven to its measurement
    before the next one is opened.
    """
    n = len(c.gates)
    preds: list[set[int]] = [set() for _ in range(n)]
    last_on: dict[QubitId, int] = {}
    last_write: dict[str, int] = {}
    reads_since: dict[str, list[int]] = defaultdict(list)
    for i, g in enumerate(c.gates):
        for q in g.qubits:
            if q in last_on:
                preds[i].add(last_on[q])
            last_on[q] = i
        for b in g.reads():
            if b in last_write:
                preds[i].add(last_write[b])
            reads_since[b].append(i)
        if g.bit:
            if g.bit in last_write:
                preds[i].add(last_write[g.bit])
            preds[i].update(j for j in reads_since[g.bit] if j != i)
            reads_since[g.bit] = []
            last_write[g.bit] = i
        if g.kind == "Barrier" and not g.qubits:
            preds[i].update(range(i))
    succs: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for i, ps in enumerate(preds):
        for p in ps:
            succs[p].append(i)
        indeg[i] = len(ps)
    remaining = {q: len(ix) for q, ix in c.gates_on.items()}
    ready = {i for i in range(n) if indeg[i] == 0}
    done = [False] * n
    pending_ts = sorted((g.timestep, i) for i, g in enumerate(c.gates))
    ptr = 0
    order = []
    while ready:
        while done[pending_ts[ptr][1]]:
            ptr += 1
        horizon = pending_ts[ptr][0] + window

        def priority(i):
            g = c.gates[i]
            cls = 0 if (g.is_measurement or g.kind == "Let") else 2 if g.kind in _SPREADING else 1
            rem = min((remaining[q] for q in g.qubits), default=0)
            return (g.timestep > horizon, cls, rem, g.timestep, i)

        best = min(ready, key=priority)
        ready.remove(best)
        done[best] = True
        order.append(best)
        for q in c.gates[best].qubits:
            remaining[q] -= 1
        for s in succs[best]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.add(s)
    if len(order) != n:
        raise CircuitError("cyclic gate dependencies")
    return tuple(order)
