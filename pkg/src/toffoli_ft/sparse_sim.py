"""Exact sparse simulation: basis-state keys -> complex amplitudes.

Each live qubit owns one bit ("slot") of a ``uint64`` key; X/CX/CCX permute
keys, Z/CZ/CCZ flip signs and only H (and the controlled-V pair) can grow the
support. A measured qubit gives its slot back, so at most 64 qubits may be
live at once. Registers listed in ``SparseState.pending`` are tensored in the
first time one of their qubits is touched.

States are kept normalised; comparisons are up to global phase.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .circuit.ir import Circuit, Gate, QubitId
from .pauli_algebra import ErrorTerm, GeneralizedError

PRUNE = 1e-14
SUPPORT_CAP = 1 << 24
BRANCH_CAP = 1 << 16
MAX_SLOTS = 64

_S = 1 / np.sqrt(2)
_MATRICES = {
    "H": np.array([[_S, _S], [_S, -_S]], dtype=complex),
    "V": np.array([[1 - 1j, 1 + 1j], [1 + 1j, 1 - 1j]], dtype=complex) / 2,
}
_MATRICES["Vdg"] = _MATRICES["V"].conj().T
_ONE = np.uint64(1)


class SupportOverflow(RuntimeError):
    pass


class BranchOverflow(RuntimeError):
    pass


class ImpossibleOutcome(ValueError):
    pass


_SHIFTS = [np.uint64(i) for i in range(64)]


def _u(x: int) -> np.uint64:
    return _SHIFTS[x] if 0 <= x < 64 else np.uint64(x)


def _mix(keys: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser: a fixed pseudo-random hash of each key."""
    with np.errstate(over="ignore"):
        z = keys + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


class SparseState:
    __slots__ = ("keys", "amps", "slots", "pending", "cap")

    def __init__(self, keys, amps, slots: Mapping[QubitId, int], pending=None, cap: int = SUPPORT_CAP):
        self.keys = np.asarray(keys, dtype=np.uint64)
        self.amps = np.asarray(amps, dtype=complex)
        self.slots = dict(slots)
        self.pending: dict[str, SparseState] = dict(pending or {})
        self.cap = cap

    # --- construction ---------------------------------------------------

    @classmethod
    def vacuum(cls) -> SparseState:
        return cls([0], [1.0], {})

    @classmethod
    def from_amplitudes(cls, qubits: Sequence[QubitId], amplitudes: Mapping[str, complex]) -> SparseState:
        """``amplitudes`` maps bitstrings (``qubits[0]`` first) to amplitudes; normalised here."""
        keys, amps = [], []
        for bits, a in amplitudes.items():
            if len(bits) != len(qubits):
                raise ValueError(f"bitstring {bits!r} does not match {len(qubits)} qubits")
            keys.append(int(bits[::-1], 2) if bits else 0)
            amps.append(a)
        s = cls(keys, amps, {q: i for i, q in enumerate(qubits)})
        s.prune()
        s.normalize()
        return s

    def copy(self) -> SparseState:
        return SparseState(self.keys.copy(), self.amps.copy(), self.slots, self.pending, self.cap)

    # --- bookkeeping ------------------------------------------------------

    def __len__(self) -> int:
        return len(self.keys)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2))

    def normalize(self) -> None:
        n = self.norm()
        if n <= 0:
            raise ValueError("zero state")
        self.amps = self.amps / np.sqrt(n)

    def prune(self) -> None:
        keep = np.abs(self.amps) >= PRUNE
        if not keep.all():
            self.keys, self.amps = self.keys[keep], self.amps[keep]

    def combine(self) -> None:
        """Merge duplicate keys and drop negligible amplitudes; leaves keys sorted."""
        uniq, inv = np.unique(self.keys, return_inverse=True)
        re = np.bincount(inv, weights=self.amps.real, minlength=len(uniq))
        im = np.bincount(inv, weights=self.amps.imag, minlength=len(uniq))
        self.keys, self.amps = uniq, re + 1j * im
        self.prune()

    def sort(self) -> None:
        order = np.argsort(self.keys, kind="stable")
        self.keys, self.amps = self.keys[order], self.amps[order]

    @property
    def qubits(self) -> list[QubitId]:
        return sorted(self.slots)

    def slot(self, q: QubitId) -> int:
        if q not in self.slots:
            self.touch(q)
        return self.slots[q]

    def touch(self, q: QubitId) -> None:
        """Bring ``q`` to life: tensor in its pending register, or |0>."""
        if q in self.slots:
            return
        if q.register in self.pending:
            self.tensor(self.pending.pop(q.register))
            if q in self.slots:
                return
        free = self._free_slots(1)
        self.slots[q] = free[0]

    def _free_slots(self, k: int) -> list[int]:
        used = set(self.slots.values())
        free = [s for s in range(MAX_SLOTS) if s not in used][:k]
        if len(free) < k:
            raise SupportOverflow(f"more than {MAX_SLOTS} live qubits")
        return free

    def tensor(self, other: SparseState) -> None:
        if set(other.slots) & set(self.slots):
            raise ValueError("tensor factors overlap")
        free = self._free_slots(len(other.slots))
        remapped = np.zeros(len(other.keys), dtype=np.uint64)
        new_slots = {}
        for (q, s), f in zip(sorted(other.slots.items(), key=lambda kv: kv[1]), free):
            remapped |= ((other.keys >> _u(s)) & _ONE) << _u(f)
            new_slots[q] = f
        if len(self.keys) * len(other.keys) > self.cap:
            raise SupportOverflow(f"support would exceed {self.cap}")
        self.keys = (self.keys[:, None] | remapped[None, :]).ravel()
        self.amps = (self.amps[:, None] * other.amps[None, :]).ravel()
        self.slots.update(new_slots)
        for reg, st in other.pending.items():
            self.pending.setdefault(reg, st)

    def release(self, q: QubitId) -> None:
        """Forget a qubit known to be |0> in every basis state."""
        s = self.slots.pop(q)
        self.keys = self.keys & ~(_ONE << _u(s))

    # --- gates --------------------------------------------------------------

    def _bit(self, q: QubitId) -> np.ndarray:
        return (self.keys >> _u(self.slot(q))) & _ONE

    def x(self, target: QubitId, controls: Sequence[QubitId] = ()) -> None:
        for c in controls:
            self.touch(c)
        t = _u(self.slot(target))
        if not controls:
            self.keys = self.keys ^ (_ONE << t)
            return
        on = np.ones(len(self.keys), dtype=np.uint64)
        for c in controls:
            on &= self._bit(c)
        self.keys = self.keys ^ (on << t)

    def z(self, qubits: Sequence[QubitId]) -> None:
        for q in qubits:
            self.touch(q)
        on = np.ones(len(self.keys), dtype=np.uint64)
        for q in qubits:
            on &= self._bit(q)
        self.amps = np.where(on.astype(bool), -self.amps, self.amps)

    def unitary1(self, target: QubitId, u: np.ndarray, controls: Sequence[QubitId] = ()) -> None:
        for c in controls:
            self.touch(c)
        s = _u(self.slot(target))
        keys, amps = self.keys, self.amps
        if controls:
            on = np.ones(len(keys), dtype=np.uint64)
            for c in controls:
                on &= self._bit(c)
            sel = on.astype(bool)
            fixed_k, fixed_a = keys[~sel], amps[~sel]
            keys, amps = keys[sel], amps[sel]
        b = ((keys >> s) & _ONE).astype(np.intp)
        base = keys & ~(_ONE << s)
        new_k = [base, base | (_ONE << s)]
        new_a = [u[0, b] * amps, u[1, b] * amps]
        if controls:
            new_k.append(fixed_k)
            new_a.append(fixed_a)
        self.keys = np.concatenate(new_k)
        self.amps = np.concatenate(new_a)
        self.combine()
        if len(self.keys) > self.cap:
            raise SupportOverflow(f"support {len(self.keys)} exceeds cap {self.cap}")

    def apply(self, gate: Gate) -> None:
        k, q = gate.kind, gate.qubits
        if k == "X":
            self.x(q[0])
        elif k in ("CX", "CCX"):
            self.x(q[-1], q[:-1])
        elif k in ("Z", "CZ", "CCZ"):
            self.z(q)
        elif k == "H":
            self.unitary1(q[0], _MATRICES["H"])
        elif k == "CV":
            self.unitary1(q[1], _MATRICES["V"], q[:1])
        elif k == "CVdg":
            self.unitary1(q[1], _MATRICES["Vdg"], q[:1])
        elif k == "Barrier":
            pass
        else:
            raise ValueError(f"{k} is not a unitary gate")

    def apply_term(self, term: ErrorTerm) -> None:
        if term.letter == "X":
            self.x(term.target, sorted(term.controls))
        else:
            self.z([*sorted(term.controls), term.target])

    # --- measurement ---------------------------------------------------------

    def split(self, q: QubitId) -> list[tuple[int, float, SparseState]]:
        """Both Z-measurement branches of ``q`` with nonzero probability."""
        bit = self._bit(q).astype(bool)
        weights = self.amps.real**2 + self.amps.imag**2
        total = float(weights.sum())
        w1 = float(weights[bit].sum())
        out = []
        for outcome, sel, w in ((0, ~bit, total - w1), (1, bit, w1)):
            p = w / total
            if p < 1e-12:
                continue
            s = SparseState(self.keys[sel], self.amps[sel] / np.sqrt(w), self.slots, self.pending, self.cap)
            s.release(q)
            out.append((outcome, p, s))
        return out

    # --- comparison ------------------------------------------------------------

    def canonical_keys(self, qubits: Sequence[QubitId]) -> np.ndarray:
        """Keys re-indexed so that ``qubits[i]`` is bit ``i``."""
        if set(qubits) != set(self.slots):
            raise ValueError("qubit sets differ")
        out = np.zeros(len(self.keys), dtype=np.uint64)
        for i, q in enumerate(qubits):
            out |= ((self.keys >> _u(self.slots[q])) & _ONE) << _u(i)
        return out

    def keys_in_layout(self, slots: Mapping[QubitId, int]) -> np.ndarray:
        """Keys re-indexed into another slot assignment of the same qubits."""
        out = np.zeros(len(self.keys), dtype=np.uint64)
        for q, s in self.slots.items():
            out |= ((self.keys >> _u(s)) & _ONE) << _u(slots[q])
        return out

    def invariant(self) -> tuple:
        """Cheap hashable summary, equal for states equal up to global phase.

        Two random real projections of the amplitudes are combined into
        phase-free numbers; equal invariants are confirmed with
        :func:`same_up_to_phase` before anything relies on them.
        """
        h = _mix(self.keys)
        u1 = (h & np.uint64(0xFFFFF)).astype(float) - 524288.0
        u2 = ((h >> np.uint64(20)) & np.uint64(0xFFFFF)).astype(float) - 524288.0
        c1, c2 = np.dot(self.amps, u1), np.dot(self.amps, u2)
        cross = c1 * np.conj(c2)
        scale = abs(c1) ** 2 + abs(c2) ** 2 + 1e-300
        return (
            len(self.keys),
            hash(frozenset(self.slots.items())),
            round(cross.real / scale, 7),
            round(cross.imag / scale, 7),
        )

    def to_dict(self, qubits: Sequence[QubitId] | None = None) -> dict[str, complex]:
        qubits = list(qubits) if qubits is not None else self.qubits
        keys = self.canonical_keys(qubits)
        out = {}
        for k, a in zip(keys, self.amps):
            out["".join(str((int(k) >> i) & 1) for i in range(len(qubits)))] = complex(a)
        return dict(sorted(out.items()))

    def dump(self, qubits: Sequence[QubitId] | None = None) -> str:
        """One line per basis state: ``bitstring re im``, sorted by bitstring."""
        lines = [f"{b} {a.real:.12g} {a.imag:.12g}" for b, a in self.to_dict(qubits).items()]
        return "\n".join(lines) + "\n"


def parse_dump(text: str, qubits: Sequence[QubitId]) -> SparseState:
    amps = {}
    for line in text.strip().splitlines():
        b, re, im = line.split()
        amps[b] = complex(float(re), float(im))
    return SparseState.from_amplitudes(qubits, amps)


# --- functional API -------------------------------------------------------------


def apply_gate(state: SparseState, gate: Gate) -> SparseState:
    out = state.copy()
    out.apply(gate)
    return out


def apply_error(state: SparseState, err: GeneralizedError) -> SparseState:
    out = state.copy()
    for t in err.terms:
        out.apply_term(t)
    if err.phase:
        out.amps = out.amps * (1j**err.phase)
    return out


def measure(
    state: SparseState, qubit: QubitId, basis: str = "Z", forced_outcome: int | None = None, rng=None
) -> tuple[SparseState, int, float]:
    """Projective measurement; the measured qubit leaves the state.

    With ``forced_outcome`` the named branch is returned together with its
    probability; otherwise an outcome is drawn from ``rng``.
    """
    s = state.copy()
    if basis == "X":
        s.unitary1(qubit, _MATRICES["H"])
    elif basis != "Z":
        raise ValueError(f"basis must be X or Z, got {basis!r}")
    branches = {o: (p, st) for o, p, st in s.split(qubit)}
    if forced_outcome is not None:
        if forced_outcome not in branches:
            raise ImpossibleOutcome(f"outcome {forced_outcome} of {qubit} has probability 0")
        p, st = branches[forced_outcome]
        return st, forced_outcome, p
    rng = rng if rng is not None else np.random.default_rng()
    outcomes = sorted(branches)
    probs = np.array([branches[o][0] for o in outcomes])
    o = int(rng.choice(outcomes, p=probs / probs.sum()))
    return branches[o][1], o, branches[o][0]


def overlap(a: SparseState, b: SparseState) -> complex:
    """<a|b> over the union of both supports (same qubit set)."""
    qubits = a.qubits
    ka, kb = a.canonical_keys(qubits), b.canonical_keys(qubits)
    _, ia, ib = np.intersect1d(ka, kb, assume_unique=True, return_indices=True)
    return complex(np.sum(np.conj(a.amps[ia]) * b.amps[ib]))


def fidelity(a: SparseState, b: SparseState) -> float:
    return abs(overlap(a, b)) ** 2 / (a.norm() * b.norm())


def same_up_to_phase(a: SparseState, b: SparseState, tol: float = 1e-9) -> bool:
    """Exact support and amplitude comparison up to a global phase."""
    if len(a) != len(b):
        return False
    if a.slots == b.slots:
        ka, kb = a.keys, b.keys
    elif set(a.slots) == set(b.slots):
        qubits = a.qubits
        ka, kb = a.canonical_keys(qubits), b.canonical_keys(qubits)
    else:
        return False
    oa, ob = np.argsort(ka), np.argsort(kb)
    if not np.array_equal(ka[oa], kb[ob]):
        return False
    x, y = a.amps[oa], b.amps[ob]
    if not len(x):
        return True
    ph = np.vdot(y, x)
    if abs(ph) < 1e-12:
        return False
    return bool(np.allclose(x, y * (ph / abs(ph)), atol=tol, rtol=0))


def product(*states: SparseState) -> SparseState:
    out = SparseState.vacuum()
    for s in states:
        out.tensor(s)
    return out


def logical_state(code, register: str, label: str) -> SparseState:
    """Encoded ``zero``, ``one``, ``plus`` or ``minus`` on a register of ``code.n`` qubits."""
    qubits = [QubitId(register, i) for i in range(code.n)]
    coeffs = {"zero": (1, 0), "one": (0, 1), "plus": (1, 1), "minus": (1, -1)}
    try:
        c0, c1 = coeffs[label]
    except KeyError:
        raise ValueError(f"unknown logical state {label!r}") from None
    amps: dict[str, complex] = defaultdict(complex)
    for value, c in ((0, c0), (1, c1)):
        if c:
            for w in code.codewords(value):
                amps["".join(map(str, w))] += c
    return SparseState.from_amplitudes(qubits, amps)


# --- branching execution -----------------------------------------------------


@dataclass
class MeasurementRecord:
    bits: dict[str, int]
    branch_probability: float


@dataclass
class Branch:
    state: SparseState
    bits: dict[str, int] = field(default_factory=dict)
    prob: float = 1.0


@dataclass
class RunResult:
    branches: list[Branch]
    rejected: float = 0.0


class Executor:
    """Runs a circuit over every measurement branch with exact probabilities.

    Gates execute in ``circuit.simulation_order`` unless ``order`` overrides
    it. Branches whose live classical bits and states agree (up to global
    phase) are merged after each classical assignment, which keeps parity
    readouts from fanning out.
    """

    def __init__(
        self,
        circuit: Circuit,
        code=None,
        inputs: Mapping[str, SparseState] | None = None,
        support_cap: int = SUPPORT_CAP,
        branch_cap: int = BRANCH_CAP,
        flip_bits: Iterable[str] = (),
        discard_dead: bool = False,
        order: Sequence[int] | None = None,
    ):
        self.circuit = circuit
        self.code = code
        self.inputs = dict(inputs or {})
        self.support_cap = support_cap
        self.branch_cap = branch_cap
        self.flip_bits = set(flip_bits)
        self.order = tuple(order) if order is not None else circuit.simulation_order
        self.position = {g: p for p, g in enumerate(self.order)}
        live: list[frozenset[str]] = [frozenset()] * len(self.order)
        acc: set[str] = set()
        for p in range(len(self.order) - 1, -1, -1):
            live[p] = frozenset(acc)
            acc |= circuit.gates[self.order[p]].reads()
        self.live_after = live
        # merge keys only need bits that are both written already and read later
        written: set[str] = set()
        self.merge_bits: list[tuple[str, ...]] = []
        for p, gi in enumerate(self.order):
            g = circuit.gates[gi]
            if g.bit is not None:
                written.add(g.bit)
            self.merge_bits.append(tuple(sorted(live[p] & written)) if g.kind == "Let" else ())
        self.merge_points = [circuit.gates[gi].kind == "Let" for gi in self.order]
        # non-output qubits whose last gate sits at each position
        self.expire: dict[int, list[QubitId]] = defaultdict(list)
        if discard_dead and circuit.outputs:
            last: dict[QubitId, int] = {}
            for p, gi in enumerate(self.order):
                for q in circuit.gates[gi].qubits:
                    last[q] = p
            for q, p in last.items():
                if q.register not in circuit.outputs:
                    self.expire[p].append(q)

    def initial_state(self) -> SparseState:
        pending = {}
        for reg, label in self.circuit.initial.items():
            if reg in self.inputs:
                pending[reg] = self.inputs[reg]
            else:
                if self.code is None:
                    raise ValueError("pre-loaded registers need a code")
                pending[reg] = logical_state(self.code, reg, label)
        for reg, st in self.inputs.items():
            pending.setdefault(reg, st)
        s = SparseState.vacuum()
        s.pending = pending
        s.cap = self.support_cap
        return s

    def initial_branches(self) -> list[Branch]:
        return [Branch(self.initial_state())]

    def injection_point(self, qubit: QubitId, k: int) -> int:
        """Sim-order position before which a fault after the qubit's ``k``-th gate lands."""
        idx = self.circuit.gates_on.get(qubit, [])
        if k < len(idx):
            return self.position[idx[k]]
        return len(self.order)

    def step(self, branches: list[Branch], pos: int, rejected: list[float]) -> list[Branch]:
        gate = self.circuit.gates[self.order[pos]]
        out: list[Branch] = []
        for br in branches:
            if gate.condition is not None and not gate.condition.evaluate(br.bits):
                out.append(br)
                continue
            if gate.kind == "Let":
                val = gate.expr.evaluate(br.bits)
                br.bits[gate.bit] = val ^ (gate.bit in self.flip_bits)
                out.append(br)
            elif gate.is_measurement:
                q = gate.qubits[0]
                if gate.kind == "MeasureX":
                    br.state.unitary1(q, _MATRICES["H"])
                for outcome, p, st in br.state.split(q):
                    if gate.postselect and outcome:
                        rejected[0] += br.prob * p
                        continue
                    bits = dict(br.bits)
                    bits[gate.bit] = outcome ^ (gate.bit in self.flip_bits)
                    out.append(Branch(st, bits, br.prob * p))
            else:
                br.state.apply(gate)
                out.append(br)
        for q in self.expire.get(pos, ()):
            out = self._discard(out, q)
        if gate.kind == "Let" and len(out) > 1:
            out = merge(out, self.merge_bits[pos])
        if len(out) > self.branch_cap:
            raise BranchOverflow(f"{len(out)} branches exceed cap {self.branch_cap}")
        return out

    @staticmethod
    def _discard(branches: list[Branch], q: QubitId) -> list[Branch]:
        out = []
        for br in branches:
            if q not in br.state.slots:
                out.append(br)
                continue
            for _, p, st in br.state.split(q):
                out.append(Branch(st, dict(br.bits), br.prob * p))
        return out

    def run(
        self,
        branches: list[Branch] | None = None,
        start: int = 0,
        stop: int | None = None,
        injections: Mapping[int, Sequence[GeneralizedError]] | None = None,
        merge_final: bool = True,
    ) -> RunResult:
        """Run positions ``start`` to ``stop``; a full run merges identical
        final branches unless ``merge_final`` is off."""
        branches = self.initial_branches() if branches is None else branches
        stop = len(self.order) if stop is None else stop
        injections = injections or {}
        rejected = [0.0]
        for pos in range(start, stop + 1):
            for err in injections.get(pos, ()):
                for br in branches:
                    inject(br.state, err)
            if pos < stop:
                branches = self.step(branches, pos, rejected)
        if stop == len(self.order):
            if merge_final and len(branches) > 1:
                branches = merge(branches, ())
            outputs = [
                q
                for reg in self.circuit.outputs
                for q in self.circuit.register_qubits(reg)
                if not self.circuit.live_span(q)[2]
            ]
            for br in branches:
                for q in outputs:
                    br.state.touch(q)
        return RunResult(branches, rejected[0])


def inject(state: SparseState, err: GeneralizedError) -> None:
    for t in err.terms:
        state.apply_term(t)
    if err.phase:
        state.amps = state.amps * (1j**err.phase)


def copy_branches(branches: Sequence[Branch]) -> list[Branch]:
    return [Branch(b.state.copy(), dict(b.bits), b.prob) for b in branches]


def merge(branches: list[Branch], names: Sequence[str]) -> list[Branch]:
    """Merge branches that agree on the bits ``names`` and in state up to phase."""
    groups: dict[tuple, list[Branch]] = {}
    out: list[Branch] = []
    for br in branches:
        key = (tuple(br.bits.get(b, 0) for b in names), br.state.invariant())
        for other in groups.get(key, ()):
            if same_up_to_phase(other.state, br.state):
                other.prob += br.prob
                break
        else:
            groups.setdefault(key, []).append(br)
            out.append(br)
    return out


def branch_enumerate(state: SparseState, circuit_suffix: Circuit, code=None, branch_cap: int = BRANCH_CAP):
    """All measurement branches of ``circuit_suffix`` run on ``state``.

    Returns ``(MeasurementRecord, SparseState)`` pairs; post-selected-out
    branches are dropped.
    """
    ex = Executor(circuit_suffix, code, branch_cap=branch_cap)
    start = state.copy()
    result = ex.run([Branch(start)], merge_final=False)
    return [(MeasurementRecord(dict(b.bits), b.prob), b.state) for b in result.branches]
