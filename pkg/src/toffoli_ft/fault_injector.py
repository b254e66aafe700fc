"""Single- and double-fault sweeps with exact branch-resolved verdicts.

A fault is a Pauli letter dropped on one qubit at a location. Every
measurement branch of the faulty run is pushed through a noiseless ideal
error-correction step on each output block and compared with the noiseless
output state.

Two locations that sit between the same pair of gates on a qubit are the
same fault, so each equivalence class is simulated once. Runs share a
noiseless prefix, and a run stops early once its branch set (conditioned on
acceptance) again equals the noiseless one at a classical assignment, since
from there on the two evolve identically.
"""

from __future__ import annotations

import functools
import itertools
import json
import os
import time
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit.ir import Circuit, FaultLocation, QubitId, locations
from .css_code import CssCode, _min_weight_table
from .pauli_algebra import ErrorTerm, GeneralizedError
from .sparse_sim import (
    BRANCH_CAP,
    SUPPORT_CAP,
    Branch,
    BranchOverflow,
    Executor,
    MeasurementRecord,
    SparseState,
    SupportOverflow,
    copy_branches,
    fidelity,
    inject,
    merge,
)

LETTERS = ("X", "Y", "Z")
FIDELITY_TOL = 1e-9
BENIGN, CORRECTABLE, LOGICAL, ERROR = "benign", "correctable", "logical", "error"
NON_PAULI = "non-Pauli"
WORKERS_ENV = "TOFFOLI_FT_WORKERS"


class UnknownResidual(RuntimeError):
    """Raised by :func:`residual_class` when no logical Pauli product fits."""


@dataclass(frozen=True)
class FaultScenario:
    faults: tuple[tuple[FaultLocation, str], ...]
    label: str = ""

    def __post_init__(self):
        locs = [loc for loc, _ in self.faults]
        if len(set(locs)) != len(locs):
            raise ValueError("fault locations must be distinct")
        for _, letter in self.faults:
            if letter not in LETTERS:
                raise ValueError(f"fault letter must be X, Y or Z, got {letter!r}")
        if not self.label:
            object.__setattr__(self, "label", "; ".join(_fault_label(loc, a) for loc, a in self.faults) or "no fault")

    def canonical(self, circuit: Circuit) -> tuple:
        """Key shared by scenarios that act identically on ``circuit``."""
        out = (fault_class(circuit, loc, a) for loc, a in self.faults)
        return tuple(sorted(c for c in out if c is not None))

    def errors(self) -> list[GeneralizedError]:
        return [GeneralizedError.pauli(a, loc.qubit) for loc, a in self.faults]


_PASSES = {
    "Z": ({"Z", "CZ", "CCZ", "MeasureZ", "Barrier", "X"}, "control"),
    "X": ({"X", "MeasureX", "Barrier"}, "target"),
}
_TARGETED = {"CX", "CCX", "CV", "CVdg"}


def _passes(letter: str, gate, q: QubitId) -> bool:
    """Whether a ``letter`` error on ``q`` commutes with ``gate`` up to a phase."""
    if letter == "Y":
        return gate.kind == "Barrier"
    kinds, role = _PASSES[letter]
    if gate.kind in kinds:
        return True
    if gate.kind in _TARGETED:
        is_target = q == gate.qubits[-1]
        return is_target if role == "target" else not is_target
    return False


def fault_class(circuit: Circuit, loc: FaultLocation, letter: str) -> tuple | None:
    """``(qubit, gates before the fault, letter)`` after sliding the fault
    forward through every gate it commutes with; ``None`` when it slides
    through a measurement and so never acts."""
    q = loc.qubit
    idx = circuit.gates_on.get(q, [])
    k = circuit.gate_position(loc)
    while k < len(idx) and _passes(letter, circuit.gates[idx[k]], q):
        if circuit.gates[idx[k]].is_measurement:
            return None
        k += 1
    return (q, k, letter)


def _fault_label(loc: FaultLocation, letter: str) -> str:
    return f"{letter}[{loc.qubit}] {loc.position} t={loc.timestep}"


@dataclass
class BranchOutcome:
    record: MeasurementRecord
    classification: str
    logical: str | None = None


@dataclass
class FaultVerdict:
    scenario: FaultScenario
    branch_outcomes: list[BranchOutcome]
    rejected_probability: float = 0.0
    reconverged: bool = False

    @property
    def logical_probability(self) -> float:
        return sum(b.record.branch_probability for b in self.branch_outcomes if b.classification == LOGICAL)

    @property
    def classification(self) -> str:
        kinds = {b.classification for b in self.branch_outcomes}
        if self.logical_probability > 1e-12:
            return LOGICAL
        if CORRECTABLE in kinds or self.rejected_probability > 1e-12:
            return CORRECTABLE
        return BENIGN

    def logical_classes(self) -> dict[str, float]:
        out: Counter = Counter()
        for b in self.branch_outcomes:
            if b.classification == LOGICAL:
                out[b.logical] += b.record.branch_probability
        return dict(out)

    def to_dict(self, with_bits: bool = True) -> dict:
        return {
            "label": self.scenario.label,
            "faults": [
                {
                    "timestep": loc.timestep,
                    "qubit": str(loc.qubit),
                    "position": loc.position,
                    "letter": a,
                    "error": str(GeneralizedError.pauli(a, loc.qubit)),
                }
                for loc, a in self.scenario.faults
            ],
            "classification": self.classification,
            "logical_probability": self.logical_probability,
            "rejected_probability": self.rejected_probability,
            "branches": [
                {
                    "probability": b.record.branch_probability,
                    "classification": b.classification,
                    "logical": b.logical,
                    **({"bits": dict(sorted(b.record.bits.items()))} if with_bits else {}),
                }
                for b in self.branch_outcomes
            ],
        }


# --- ideal error correction ------------------------------------------------------


def _parity(keys: np.ndarray, mask: int) -> np.ndarray:
    return (np.bitwise_count(keys & np.uint64(mask)) & 1).astype(np.int64)


def _block_mask(state: SparseState, register: str, bits: Sequence[int]) -> int:
    m = 0
    for i, b in enumerate(bits):
        if b:
            m |= 1 << state.slots[QubitId(register, i)]
    return m


def _table_array(checks: np.ndarray, n: int) -> list[tuple[int, ...]]:
    """Decoder lookup as a list indexed by the syndrome read as an integer (row 0 = bit 0)."""
    table = _min_weight_table(checks, n)
    out = [None] * (1 << len(checks))
    for synd, err in table.items():
        out[sum(b << j for j, b in enumerate(synd))] = err
    return out


class IdealCorrector:
    """Noiseless projective syndrome measurement plus lookup correction."""

    def __init__(self, code: CssCode, blocks: Sequence[str]):
        self.code = code
        self.blocks = tuple(blocks)
        self.x_fix = _table_array(np.asarray(code.h_z), code.n)
        self.z_fix = _table_array(np.asarray(code.h_x), code.n)

    def __call__(self, state: SparseState) -> list[tuple[float, SparseState]]:
        """Every syndrome branch with nonzero weight, corrected, with its probability."""
        return [(p * q, t) for p, s in self._fix_bit_flips(state) for q, t in self._fix_phase_flips(s)]

    def _fix_bit_flips(self, state: SparseState) -> list[tuple[float, SparseState]]:
        keys = state.keys
        synd = np.zeros(len(keys), dtype=np.int64)
        corr = np.zeros(len(keys), dtype=np.uint64)
        shift = 0
        for reg in self.blocks:
            s = np.zeros(len(keys), dtype=np.int64)
            for j, row in enumerate(np.asarray(self.code.h_z)):
                s |= _parity(keys, _block_mask(state, reg, row)) << j
            lut = np.array([_block_mask(state, reg, e) if e is not None else 0 for e in self.x_fix], dtype=np.uint64)
            corr |= lut[s]
            synd |= s << shift
            shift += len(self.code.h_z)
        out = []
        total = state.norm()
        for v in np.unique(synd):
            sel = synd == v
            sub = SparseState(keys[sel] ^ corr[sel], state.amps[sel], state.slots, state.pending, state.cap)
            p = sub.norm() / total
            sub.normalize()
            out.append((p, sub))
        return out

    def _fix_phase_flips(self, state: SparseState) -> list[tuple[float, SparseState]]:
        branches = [(1.0, state, {reg: 0 for reg in self.blocks})]
        for reg in self.blocks:
            for j, row in enumerate(np.asarray(self.code.h_x)):
                mask = np.uint64(_block_mask(state, reg, row))
                nxt = []
                for p, s, synd in branches:
                    for sign in (0, 1):
                        t = SparseState(
                            np.concatenate([s.keys, s.keys ^ mask]),
                            np.concatenate([s.amps, -s.amps if sign else s.amps]) / 2,
                            s.slots,
                            s.pending,
                            s.cap,
                        )
                        t.combine()
                        w = t.norm()
                        if w < 1e-12:
                            continue
                        t.normalize()
                        nxt.append((p * w, t, {**synd, reg: synd[reg] | (sign << j)}))
                branches = nxt
        out = []
        for p, s, synd in branches:
            for reg in self.blocks:
                err = self.z_fix[synd[reg]]
                for i, b in enumerate(err or ()):
                    if b:
                        s.z([QubitId(reg, i)])
            out.append((p, s))
        return out


def logical_products(code: CssCode, blocks: Sequence[str]) -> list[tuple[str, GeneralizedError]]:
    """Every non-identity product of logical X/Z/Y over ``blocks``, with its label."""
    out = []
    for choice in itertools.product(range(4), repeat=len(blocks)):
        if not any(choice):
            continue
        terms: list[ErrorTerm] = []
        names = []
        for reg, c in zip(blocks, choice):
            if c & 1:
                terms += [ErrorTerm("X", QubitId(reg, i)) for i, b in enumerate(code.logical_x) if b]
                names.append(f"Xbar[{reg}]")
            if c & 2:
                terms += [ErrorTerm("Z", QubitId(reg, i)) for i, b in enumerate(code.logical_z) if b]
                names.append(f"Zbar[{reg}]")
        out.append((" * ".join(names), GeneralizedError(tuple(terms))))
    return out


def residual_class(state: SparseState, ideal: SparseState, products) -> str | None:
    """``None`` if ``state`` is the ideal one, else the matching logical label.

    Raises:
        UnknownResidual: no logical Pauli product maps ``ideal`` onto ``state``.
    """
    if fidelity(state, ideal) >= 1 - FIDELITY_TOL:
        return None
    for label, err in products:
        cand = ideal.copy()
        inject(cand, err)
        if fidelity(state, cand) >= 1 - FIDELITY_TOL:
            return label
    raise UnknownResidual("residual is not a logical Pauli product")


class Classifier:
    def __init__(self, circuit: Circuit, code: CssCode, ideal: SparseState):
        self.circuit = circuit
        self.code = code
        self.outputs = tuple(circuit.outputs)
        self.corrector = IdealCorrector(code, self.outputs)
        self.products = logical_products(code, self.outputs)
        self.ideal = ideal

    def output_branches(self, state: SparseState) -> list[tuple[float, SparseState]]:
        """Measure away everything but the output registers."""
        s = state.copy()
        for reg in self.outputs:
            for q in self.circuit.register_qubits(reg):
                s.touch(q)
        s.pending = {}
        branches = [(1.0, s)]
        for q in sorted(q for q in s.slots if q.register not in self.outputs):
            branches = [(p * w, t) for p, b in branches for _, w, t in b.split(q)]
        return branches

    def classify(self, state: SparseState) -> list[tuple[float, str, str | None]]:
        out = []
        for p, s in self.output_branches(state):
            if fidelity(s, self.ideal) >= 1 - FIDELITY_TOL:
                out.append((p, BENIGN, None))
                continue
            for q, t in self.corrector(s):
                try:
                    label = residual_class(t, self.ideal, self.products)
                except UnknownResidual:
                    label = NON_PAULI
                out.append((p * q, CORRECTABLE, None) if label is None else (p * q, LOGICAL, label))
        return out


# --- scenario execution ---------------------------------------------------------------

_Z_SAFE = {"Z", "CZ", "CCZ", "MeasureZ", "Barrier", "X"}
_CONTROLLED = {"CX", "CCX", "CV", "CVdg"}
STORE_LIMIT = 1 << 18


def _z_commutes(gate, q: QubitId) -> bool:
    """Whether Z on ``q`` passes ``gate`` unchanged, up to a phase."""
    if gate.kind in _Z_SAFE:
        return True
    return gate.kind in _CONTROLLED and q != gate.qubits[-1]


def solve_sign_pattern(keys: np.ndarray, signs: np.ndarray, allowed: int) -> int | None:
    """Find ``S`` within ``allowed`` with ``signs[k] = parity(keys[k] & S) ^ signs[0]``.

    Returns ``None`` when no such ``S`` exists.
    """
    rows = (keys ^ keys[0]) & np.uint64(allowed)
    rhs = (signs ^ signs[0]).astype(np.uint8)
    pivots: list[tuple[int, int]] = []
    for b in range(64):
        if not (allowed >> b) & 1:
            continue
        bit = np.uint64(1 << b)
        hit = np.nonzero(rows & bit)[0]
        if not len(hit):
            continue
        piv = hit[0]
        prow, prhs = rows[piv], rhs[piv]
        others = hit[1:]
        rows[others] ^= prow
        rhs[others] ^= prhs
        rows[piv] = 0
        rhs[piv] = 0
        pivots.append((int(prow), int(prhs)))
    if rhs.any():
        return None
    # back-substitute: the pivot rows are in echelon order by lowest set pivot bit
    sol = 0
    for prow, prhs in reversed(pivots):
        low = prow & -prow
        if (bin(prow & sol).count("1") & 1) != prhs:
            sol |= low
    check = (np.bitwise_count(keys & np.uint64(sol)) & 1).astype(np.uint8) ^ signs[0]
    return sol if np.array_equal(check, signs.astype(np.uint8)) else None


@dataclass
class _RefBranch:
    slots: dict[QubitId, int]
    keys: np.ndarray
    amps: np.ndarray
    prob: float




class ScenarioRunner:
    """Runs fault scenarios on one circuit, reusing a noiseless reference run."""

    def __init__(
        self,
        circuit: Circuit,
        code: CssCode,
        support_cap: int = SUPPORT_CAP,
        branch_cap: int = BRANCH_CAP,
        early_exit: bool = True,
    ):
        self.circuit = circuit
        self.code = code
        self.early_exit = early_exit
        self.ex = Executor(circuit, code, support_cap=support_cap, branch_cap=branch_cap, discard_dead=True)
        self.n = len(self.ex.order)
        self.checkpoints: dict[int, dict[tuple, _RefBranch]] = {}
        # position of the last gate on each qubit that Z does not pass through
        self.z_barrier: dict[QubitId, int] = {}
        for pos, gi in enumerate(self.ex.order):
            g = circuit.gates[gi]
            for q in g.qubits:
                if not _z_commutes(g, q):
                    self.z_barrier[q] = pos
        branches = self.ex.initial_branches()
        rejected = [0.0]
        for pos in range(self.n):
            branches = self.ex.step(branches, pos, rejected)
            if early_exit and self.ex.merge_points[pos]:
                self._store_checkpoint(pos, branches)
        if len(branches) > 1:
            branches = merge(branches, ())
        self.reference_rejected = rejected[0]
        outs = [(br, Classifier(circuit, code, br.state).output_branches(br.state)) for br in branches[:1]]
        ideal = outs[0][1][0][1]
        self.classifier = Classifier(circuit, code, ideal)
        self.reference = self._outcomes(branches)
        if any(o.classification != BENIGN for o in self.reference):
            raise ValueError(f"noiseless run of {circuit.name} does not end in a single output state")

    def _store_checkpoint(self, pos: int, branches: list[Branch]) -> None:
        if sum(len(b.state) for b in branches) > STORE_LIMIT:
            return
        names = self.ex.merge_bits[pos]
        refs: dict[tuple, _RefBranch] = {}
        for br in branches:
            key = tuple(br.bits.get(b, 0) for b in names)
            if key in refs:
                return  # ambiguous: two states share the classical record
            order = np.argsort(br.state.keys)
            refs[key] = _RefBranch(dict(br.state.slots), br.state.keys[order], br.state.amps[order], br.prob)
        self.checkpoints[pos] = refs

    def _z_residuals(self, pos: int, branches: list[Branch], rejected: float) -> list[tuple[Branch, tuple]] | None:
        """Match every branch to a noiseless one up to a transparent Z pattern.

        Returns ``(branch, qubits carrying Z)`` per branch, or ``None``. No
        qubits means the branch has rejoined the noiseless run outright.
        """
        refs = self.checkpoints.get(pos)
        if refs is None or rejected >= 1:
            return None
        names = self.ex.merge_bits[pos]
        acc = 1.0 - rejected
        totals: Counter = Counter()
        out = []
        for br in branches:
            key = tuple(br.bits.get(b, 0) for b in names)
            ref = refs.get(key)
            if ref is None or len(br.state) != len(ref.keys):
                return None
            if br.state.slots == ref.slots:
                ck = br.state.keys
            elif set(br.state.slots) == set(ref.slots):
                ck = br.state.keys_in_layout(ref.slots)
            else:
                return None
            order = np.argsort(ck)
            if not np.array_equal(ck[order], ref.keys):
                return None
            ratio = br.state.amps[order] / ref.amps
            ratio = ratio * np.conj(ratio[0]) / abs(ratio[0])
            plus = np.abs(ratio - 1) < 1e-9
            if not (plus | (np.abs(ratio + 1) < 1e-9)).all():
                return None
            allowed = 0
            for q, slot in ref.slots.items():
                if self.z_barrier.get(q, -1) <= pos:
                    allowed |= 1 << slot
            mask = solve_sign_pattern(ref.keys, (~plus).astype(np.uint8), allowed)
            if mask is None:
                return None
            totals[key] += br.prob / acc
            out.append((br, tuple(q for q, slot in ref.slots.items() if (mask >> slot) & 1)))
        for key, p in totals.items():
            if abs(p - refs[key].prob) > 1e-9:
                return None
        return out

    def _z_verdict(self, scenario, matches, rejected: float) -> FaultVerdict:
        outs = []
        for br, flipped in matches:
            zs = tuple(sorted(q for q in flipped if q.register in self.classifier.outputs))
            for p, kind, label in self._classify_z(zs):
                outs.append(BranchOutcome(MeasurementRecord(dict(br.bits), br.prob * p), kind, label))
        return FaultVerdict(scenario, outs, rejected, reconverged=True)

    @functools.lru_cache(maxsize=4096)
    def _classify_z(self, zs: tuple[QubitId, ...]) -> list[tuple[float, str, str | None]]:
        st = self.classifier.ideal.copy()
        for q in zs:
            st.z([q])
        return self.classifier.classify(st)

    def _outcomes(self, branches: list[Branch]) -> list[BranchOutcome]:
        out = []
        for br in branches:
            for p, kind, label in self.classifier.classify(br.state):
                out.append(BranchOutcome(MeasurementRecord(dict(br.bits), br.prob * p), kind, label))
        return out

    def injections(self, scenario: FaultScenario) -> dict[int, list[GeneralizedError]]:
        inj: dict[int, list[GeneralizedError]] = {}
        for q, k, letter in scenario.canonical(self.circuit):
            inj.setdefault(self.ex.injection_point(q, k), []).append(GeneralizedError.pauli(letter, q))
        return inj

    def _finish(self, scenario, branches, start, injections) -> FaultVerdict:
        rejected = [0.0]
        last = max(injections) if injections else start
        for pos in range(start, self.n + 1):
            for err in injections.get(pos, ()):
                for br in branches:
                    inject(br.state, err)
            if pos == self.n:
                break
            branches = self.ex.step(branches, pos, rejected)
            if self.early_exit and pos >= last and pos in self.checkpoints:
                matches = self._z_residuals(pos, branches, rejected[0])
                if matches is not None:
                    return self._z_verdict(scenario, matches, rejected[0])
        if len(branches) > 1:
            branches = merge(branches, ())
        return FaultVerdict(scenario, self._outcomes(branches), rejected[0])

    def run(self, scenario: FaultScenario) -> FaultVerdict:
        return next(iter(self.run_many([scenario])))[1]

    def run_many(self, scenarios: Sequence[FaultScenario]) -> Iterator[tuple[int, FaultVerdict]]:
        """Yield ``(index, verdict)`` in order of first injection, sharing the noiseless prefix."""
        plan = []
        for i, sc in enumerate(scenarios):
            inj = self.injections(sc)
            plan.append((min(inj) if inj else self.n, i, inj))
        plan.sort(key=lambda t: (t[0], t[1]))
        cursor = self.ex.initial_branches()
        cpos = 0
        for start, i, inj in plan:
            while cpos < start:
                cursor = self.ex.step(cursor, cpos, [0.0])
                cpos += 1
            yield i, self._finish(scenarios[i], copy_branches(cursor), start, inj)


def run_scenario(circuit: Circuit, scenario: FaultScenario, code: CssCode, **kwargs) -> FaultVerdict:
    return ScenarioRunner(circuit, code, **kwargs).run(scenario)


def enumerate_single_faults(circuit: Circuit) -> list[FaultScenario]:
    return [FaultScenario(((loc, a),)) for loc in locations(circuit) for a in LETTERS]


def sample_double_faults(circuit: Circuit, budget: int, seed: int | None = None) -> list[FaultScenario]:
    rng = np.random.default_rng(seed)
    locs = locations(circuit)
    out = []
    for _ in range(budget):
        i, j = rng.choice(len(locs), size=2, replace=False)
        a, b = rng.choice(3, size=2)
        out.append(FaultScenario(((locs[i], LETTERS[a]), (locs[j], LETTERS[b]))))
    return out


def all_double_faults(circuit: Circuit) -> list[FaultScenario]:
    locs = locations(circuit)
    return [
        FaultScenario(((l1, a), (l2, b)))
        for l1, l2 in itertools.combinations(locs, 2)
        for a in LETTERS
        for b in LETTERS
    ]


# --- analysis ----------------------------------------------------------------------


@dataclass
class AnalysisReport:
    circuit: str
    order: int
    scenario_count: int
    totals: dict[str, int]
    offending: list[FaultVerdict] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)
    classes_simulated: int = 0
    reconverged: int = 0
    elapsed: float = 0.0
    sampled: bool = False
    seed: int | None = None

    @property
    def has_logical(self) -> bool:
        return self.totals.get(LOGICAL, 0) > 0

    @property
    def max_logical_probability(self) -> float:
        return max((v.logical_probability for v in self.offending), default=0.0)

    def to_dict(self, with_bits: bool = False, timing: bool = False) -> dict:
        out = {
            "circuit": self.circuit,
            "order": self.order,
            "scenarios": self.scenario_count,
            "sampled": self.sampled,
            "seed": self.seed,
            "totals": self.totals,
            "classes_simulated": self.classes_simulated,
            "reconverged_early": self.reconverged,
            "logical_scenarios": [v.to_dict(with_bits) for v in self.offending],
            "errors": [{"label": a, "message": b} for a, b in self.errors],
        }
        if timing:
            out["elapsed_seconds"] = round(self.elapsed, 3)
        return out

    def to_json(self, with_bits: bool = False, timing: bool = False) -> str:
        return json.dumps(self.to_dict(with_bits, timing), indent=2)

    def to_table(self, limit: int | None = 50, timing: bool = False) -> str:
        lines = [
            f"circuit {self.circuit}  order {self.order}  scenarios {self.scenario_count}"
            + (f"  (sampled, seed {self.seed})" if self.sampled else ""),
            "  ".join(f"{k} {self.totals.get(k, 0)}" for k in (BENIGN, CORRECTABLE, LOGICAL, ERROR)),
            f"simulated {self.classes_simulated} fault classes"
            + (f" in {self.elapsed:.1f} s" if timing else ""),
        ]
        if self.offending:
            lines.append("")
            lines.append(f"{'scenario':<42} {'p_logical':>10}  classes")
            shown = self.offending if limit is None else self.offending[:limit]
            for v in shown:
                classes = ", ".join(f"{k} ({p:.3g})" for k, p in sorted(v.logical_classes().items()))
                lines.append(f"{v.scenario.label:<42} {v.logical_probability:>10.6f}  {classes}")
            if len(shown) < len(self.offending):
                lines.append(f"... {len(self.offending) - len(shown)} more")
        for label, msg in self.errors:
            lines.append(f"error {label}: {msg}")
        return "\n".join(lines)


def _run_chunk(args) -> list[tuple[int, FaultVerdict | str]]:
    circuit, code, scenarios, caps = args
    runner = ScenarioRunner(circuit, code, **caps)
    return _drive(runner, scenarios)


def _drive(runner: ScenarioRunner, scenarios: Sequence[FaultScenario]) -> list[tuple[int, FaultVerdict | str]]:
    out: list[tuple[int, FaultVerdict | str]] = []
    it = runner.run_many(scenarios)
    done: set[int] = set()
    while True:
        try:
            i, v = next(it)
        except StopIteration:
            break
        except (SupportOverflow, BranchOverflow) as exc:
            # the generator is spent; redo the rest one by one
            for j, sc in enumerate(scenarios):
                if j in done:
                    continue
                try:
                    out.append((j, runner.run(sc)))
                except (SupportOverflow, BranchOverflow) as e:
                    out.append((j, f"{type(e).__name__}: {e}"))
                done.add(j)
            del exc
            break
        out.append((i, v))
        done.add(i)
    return out


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def analyze(
    circuit: Circuit,
    code: CssCode,
    order: int = 1,
    sample_budget: int | None = None,
    seed: int | None = None,
    scenarios: Iterable[FaultScenario] | None = None,
    workers: int | None = None,
    support_cap: int = SUPPORT_CAP,
    branch_cap: int = BRANCH_CAP,
    progress=None,
) -> AnalysisReport:
    """Run every (or a sampled set of) fault scenario(s) of the given order."""
    t0 = time.perf_counter()
    sampled = False
    if scenarios is not None:
        scenarios = list(scenarios)
    elif order == 1:
        scenarios = enumerate_single_faults(circuit)
        if sample_budget is not None and sample_budget < len(scenarios):
            rng = np.random.default_rng(seed)
            keep = sorted(rng.choice(len(scenarios), size=sample_budget, replace=False))
            scenarios = [scenarios[i] for i in keep]
            sampled = True
    elif order == 2:
        if sample_budget is None:
            scenarios = all_double_faults(circuit)
        else:
            scenarios = sample_double_faults(circuit, sample_budget, seed)
            sampled = True
    else:
        raise ValueError("order must be 1 or 2")

    classes: dict[tuple, list[int]] = {}
    for i, sc in enumerate(scenarios):
        classes.setdefault(sc.canonical(circuit), []).append(i)
    reps = [scenarios[idx[0]] for idx in classes.values()]
    caps = {"support_cap": support_cap, "branch_cap": branch_cap}
    workers = workers or default_workers()
    if workers > 1 and len(reps) > workers:
        chunks = [reps[w::workers] for w in range(workers)]
        offsets = [list(range(w, len(reps), workers)) for w in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, [(circuit, code, ch, caps) for ch in chunks]))
        results = [(off[j], v) for off, part in zip(offsets, parts) for j, v in part]
    else:
        runner = ScenarioRunner(circuit, code, **caps)
        results = []
        for n_done, (j, v) in enumerate(_drive(runner, reps), 1):
            results.append((j, v))
            if progress is not None:
                progress(n_done, len(reps))

    by_rep = dict(results)
    totals: Counter = Counter()
    offending: list[tuple[int, FaultVerdict]] = []
    errors = []
    reconverged = 0
    for r, idx in enumerate(classes.values()):
        v = by_rep[r]
        for i in idx:
            sc = scenarios[i]
            if isinstance(v, str):
                totals[ERROR] += 1
                errors.append((sc.label, v))
                continue
            totals[v.classification] += 1
            reconverged += v.reconverged
            if v.classification == LOGICAL:
                offending.append((i, FaultVerdict(sc, v.branch_outcomes, v.rejected_probability, v.reconverged)))
    offending.sort(key=lambda t: t[0])
    return AnalysisReport(
        circuit=circuit.name,
        order=order,
        scenario_count=len(scenarios),
        totals={k: totals.get(k, 0) for k in (BENIGN, CORRECTABLE, LOGICAL, ERROR)},
        offending=[v for _, v in offending],
        errors=errors,
        classes_simulated=len(reps),
        reconverged=reconverged,
        elapsed=time.perf_counter() - t0,
        sampled=sampled,
        seed=seed,
    )


# --- analytic erroneous states -------------------------------------------------------

TOFFOLI_BLOCKS = ("T1", "T2", "T3")


def _ancilla_terms(code: CssCode, flip_t3: bool) -> dict[tuple[int, ...], complex]:
    """|A> (or |B> = Xbar_T3 |A>) as bit tuples over T1, T2, T3."""
    out: dict[tuple[int, ...], complex] = {}
    for a, b in itertools.product((0, 1), repeat=2):
        for w1 in code.codewords(a):
            for w2 in code.codewords(b):
                for w3 in code.codewords((a & b) ^ flip_t3):
                    out[(*w1, *w2, *w3)] = 1.0
    return out


def _parity_terms(n: int, odd: bool, frame: str) -> dict[tuple[int, ...], complex]:
    """|even> / |odd> on one auxiliary register; in the cat frame (after H on
    every qubit) these become |0..0> +- |1..1>."""
    if frame == "cat":
        return {(0,) * n: 1.0, (1,) * n: -1.0 if odd else 1.0}
    if frame != "physical":
        raise ValueError(f"frame must be 'cat' or 'physical', got {frame!r}")
    return {bits: 1.0 for bits in itertools.product((0, 1), repeat=n) if sum(bits) % 2 == odd}


def _tensor(*parts: dict) -> dict[tuple[int, ...], complex]:
    out = {(): 1.0}
    for part in parts:
        out = {k + k2: a * a2 for k, a in out.items() for k2, a2 in part.items()}
    return out


def _add(target: dict, terms: dict, coeff: complex = 1.0) -> None:
    for k, a in terms.items():
        target[k] = target.get(k, 0) + coeff * a


def _project(terms: dict, pos: int, value: int) -> dict:
    return {k: a for k, a in terms.items() if k[pos] == value}


def _z(terms: dict, pos: int) -> dict:
    return {k: -a if k[pos] else a for k, a in terms.items()}


def _x(terms: dict, pos: int) -> dict:
    return {k[:pos] + (1 - k[pos],) + k[pos + 1 :]: a for k, a in terms.items()}


def _layout(code: CssCode, aux: int) -> list[QubitId]:
    qubits = [QubitId(r, i) for r in TOFFOLI_BLOCKS for i in range(code.n)]
    return qubits + [QubitId(f"A{r}", i) for r in range(1, aux + 1) for i in range(code.n)]


def _to_state(code: CssCode, aux: int, terms: dict) -> SparseState:
    qubits = _layout(code, aux)
    bits = np.array(list(terms), dtype=np.uint64).reshape(len(terms), len(qubits))
    keys = (bits << np.arange(len(qubits), dtype=np.uint64)).sum(axis=1, dtype=np.uint64)
    s = SparseState(keys, np.array(list(terms.values()), dtype=complex), {q: i for i, q in enumerate(qubits)})
    s.prune()
    s.normalize()
    return s


def ancilla_state(code: CssCode, which: str = "A") -> SparseState:
    """The Toffoli ancilla |A> or |B> on T1, T2, T3."""
    return _to_state(code, 0, _ancilla_terms(code, which == "B"))


def parity_state(code: CssCode, odd: bool, register: str = "A1", frame: str = "physical") -> SparseState:
    qubits = [QubitId(register, i) for i in range(code.n)]
    return SparseState.from_amplitudes(
        qubits, {"".join(map(str, k)): a for k, a in _parity_terms(code.n, odd, frame).items()}
    )


def analytic_state(
    kind: str,
    i: int,
    code: CssCode | None = None,
    k: int = 0,
    rounds: int | None = None,
    frame: str = "physical",
) -> SparseState:
    """Closed-form erroneous states after the unitary part of the parity rounds.

    ``kind`` is one of:

    * ``"cx_error"``: ``X_T1,i CX(T2,i -> A1,i) (|A>|even> + |B>|odd>)``
      written through the projectors ``P0``/``P1`` on ``T2,i`` (one auxiliary).
    * ``"cx_error_expanded"``: the same state expanded as
      ``X_T1,i [(|A>+|B>)(|even>+|odd>) + Z_T2,i (|A>-|B>)(|even>-|odd>)]``.
    * ``"late_flip"``: a bit flip on ``T1,i`` after ``k`` of ``rounds`` rounds
      (default ``2t + 1``), propagated through the remaining Toffoli gates.

    Registers are T1-T3 followed by A1..AR. In the ``"cat"`` frame every
    auxiliary qubit has had a final H applied, which keeps the support small.
    """
    from .css_code import steane

    code = code or steane()
    n = code.n
    if not 0 <= i < n:
        raise ValueError(f"qubit index {i} out of range")
    A, B = _ancilla_terms(code, False), _ancilla_terms(code, True)
    t1, t2 = i, n + i
    if kind in ("cx_error", "cx_error_expanded"):
        even, odd = _parity_terms(n, False, frame), _parity_terms(n, True, frame)
        terms: dict = {}
        if kind == "cx_error":
            _add(terms, _tensor(_project(A, t2, 0), even))
            _add(terms, _tensor(_project(B, t2, 1), even))
            _add(terms, _tensor(_project(A, t2, 1), odd))
            _add(terms, _tensor(_project(B, t2, 0), odd))
        else:
            a_plus_b, a_minus_b, e_plus_o, e_minus_o = {}, {}, {}, {}
            _add(a_plus_b, A)
            _add(a_plus_b, B)
            _add(a_minus_b, A)
            _add(a_minus_b, B, -1)
            _add(e_plus_o, even)
            _add(e_plus_o, odd)
            _add(e_minus_o, even)
            _add(e_minus_o, odd, -1)
            _add(terms, _tensor(a_plus_b, e_plus_o))
            _add(terms, _z(_tensor(a_minus_b, e_minus_o), t2))
        return _to_state(code, 1, _x(terms, t1))
    if kind == "late_flip":
        rounds = 2 * code.t + 1 if rounds is None else rounds
        if not 0 <= k <= code.t or k >= rounds:
            raise ValueError(f"k must satisfy 0 <= k <= t and k < rounds, got {k}")
        after = rounds - k
        even, odd = _parity_terms(n, False, frame), _parity_terms(n, True, frame)
        terms = {}
        _add(terms, _tensor(_project(A, t2, 0), *[even] * rounds))
        _add(terms, _tensor(_project(B, t2, 0), *[odd] * rounds))
        _add(terms, _tensor(_project(A, t2, 1), *[even] * k, *[odd] * after))
        _add(terms, _tensor(_project(B, t2, 1), *[odd] * k, *[even] * after))
        return _to_state(code, rounds, _x(terms, t1))
    raise ValueError(f"unknown analytic state {kind!r}")


def readout_free(circuit: Circuit, frame: str = "physical") -> Circuit:
    """The preparation up to the auxiliary parity readout.

    Unverified auxiliary measurements, classical assignments and
    classically controlled gates are dropped; in the ``"cat"`` frame each
    dropped measurement becomes an H. Output registers gain the auxiliaries.
    """
    from .circuit.ir import Gate

    aux = sorted({q.register for g in circuit.gates for q in g.qubits if _is_aux(q.register)})
    gates = []
    for g in circuit.gates:
        if g.kind == "Let" or g.condition is not None:
            continue
        if g.is_measurement and not g.postselect and _is_aux(g.qubits[0].register):
            if frame == "cat":
                gates.append(Gate("H", g.qubits, g.timestep))
            continue
        gates.append(g)
    return Circuit(
        name=f"{circuit.name}_unitary_{frame}",
        registers=dict(circuit.registers),
        gates=tuple(gates),
        initial=dict(circuit.initial),
        outputs=(*circuit.outputs, *aux),
        rounds=circuit.rounds,
    )


def _is_aux(register: str) -> bool:
    return register.startswith("A") and register[1:].isdigit()


def simulate_with_faults(
    circuit: Circuit, code: CssCode, scenario: FaultScenario | None = None
) -> list[Branch]:
    """Every surviving branch of ``circuit`` with the scenario's faults applied."""
    ex = Executor(circuit, code)
    inj: dict[int, list[GeneralizedError]] = {}
    for loc, letter in scenario.faults if scenario is not None else ():
        pos = ex.injection_point(loc.qubit, circuit.gate_position(loc))
        inj.setdefault(pos, []).append(GeneralizedError.pauli(letter, loc.qubit))
    result = ex.run(injections=inj)
    for br in result.branches:
        for reg in circuit.outputs:
            for q in circuit.register_qubits(reg):
                br.state.touch(q)
    return result.branches


def fault_before_gate(circuit: Circuit, qubit: QubitId, k: int, letter: str = "X") -> FaultScenario:
    """Scenario with ``letter`` on ``qubit`` just before its ``k``-th gate (0-based)."""
    idx = circuit.gates_on[qubit]
    if k < len(idx):
        loc = FaultLocation(circuit.gates[idx[k]].timestep, qubit, "before")
    else:
        loc = FaultLocation(circuit.gates[idx[-1]].timestep, qubit, "after")
    return FaultScenario(((loc, letter),))
