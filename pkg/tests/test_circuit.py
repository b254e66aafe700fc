from __future__ import annotations

import re

import numpy as np
import pytest
from helpers import toffoli_ancilla, weighted_fidelity
from hypothesis import given
from hypothesis import strategies as st
from oracles import V, X, gate_matrix

from toffoli_ft.circuit import (
    Circuit,
    CircuitError,
    CircuitParseError,
    FaultLocation,
    Gate,
    InvalidRounds,
    QubitId,
    build_bfec,
    build_cat_prep,
    build_full_toffoli,
    build_modified_prep,
    build_pfec,
    build_shor_prep,
    build_toffoli_decomposition,
    dumps,
    loads,
    locations,
    parse_expr,
)
from toffoli_ft.css_code import steane, unencoded
from toffoli_ft.pauli_algebra import GeneralizedError
from toffoli_ft.sparse_sim import Branch, Executor, SparseState, apply_error, fidelity, logical_state

CODE = steane()
q = [QubitId("q", i) for i in range(3)]


# --- IR validation ------------------------------------------------------------


def test_operand_count_checked():
    with pytest.raises(CircuitError):
        Gate("CCX", (q[0], q[1]), 0).check()


def test_repeated_operand_rejected():
    with pytest.raises(CircuitError):
        Gate("CX", (q[0], q[0]), 0).check()


def test_unknown_kind_rejected():
    with pytest.raises(CircuitError):
        Gate("SWAP", (q[0], q[1]), 0).check()


def test_timestep_overlap_rejected():
    c = Circuit("c", {"q": 3}, (Gate("CX", (q[0], q[1]), 0), Gate("H", (q[1],), 0)))
    with pytest.raises(CircuitError, match="timestep"):
        c.validate()


def test_gate_after_measurement_rejected():
    c = Circuit("c", {"q": 1}, (Gate("MeasureZ", (q[0],), 0, bit="m"), Gate("H", (q[0],), 1)))
    with pytest.raises(CircuitError, match="measured"):
        c.validate()


def test_condition_must_read_earlier_bits():
    c = Circuit("c", {"q": 1}, (Gate("X", (q[0],), 0, condition=parse_expr("m")),))
    with pytest.raises(CircuitError):
        c.validate()


def test_even_rounds_rejected():
    with pytest.raises(InvalidRounds):
        build_shor_prep(CODE, rounds=2)
    with pytest.raises(InvalidRounds):
        build_modified_prep(CODE, rounds=0)


# --- locations ----------------------------------------------------------------


def test_locations_empty():
    assert locations(Circuit("empty", {}, ())) == []


def test_locations_single_gate():
    c = Circuit("one", {"q": 2}, (Gate("CX", (q[0], q[1]), 0),))
    locs = locations(c)
    assert len(locs) == 4
    assert {loc.position for loc in locs} == {"before", "after"}


def test_location_golden_counts():
    assert len(locations(build_shor_prep(CODE, 3))) == 1815
    assert len(locations(build_modified_prep(CODE, 3))) == 25881


def test_no_location_after_measurement():
    c = Circuit("m", {"q": 1}, (Gate("H", (q[0],), 0), Gate("MeasureZ", (q[0],), 1, bit="m")))
    assert FaultLocation(1, q[0], "after") not in locations(c)
    assert len(locations(c)) == 3


def test_gate_position():
    c = build_shor_prep(CODE, 3)
    t1 = QubitId("T1", 0)
    ccx = [c.gates[i].timestep for i in c.gates_on[t1]]
    assert len(ccx) == 3
    assert c.gate_position(FaultLocation(ccx[1], t1, "before")) == 1
    assert c.gate_position(FaultLocation(ccx[1], t1, "after")) == 2


# --- text format --------------------------------------------------------------


@pytest.mark.parametrize(
    "build",
    [
        lambda: build_shor_prep(CODE, 3),
        lambda: build_modified_prep(CODE, 3, insert_pfec=True),
        lambda: build_full_toffoli(CODE),
        build_toffoli_decomposition,
        lambda: build_cat_prep(7),
    ],
)
def test_text_round_trip(build):
    c = build()
    text = dumps(c)
    again = loads(text)
    assert again == c
    assert dumps(again) == text


def test_decomposition_text_golden():
    assert dumps(build_toffoli_decomposition()) == (
        "circuit toffoli_decomposition\n"
        "register Q 3\n"
        "output Q\n"
        "0 CV Q.1,Q.2\n"
        "1 CX Q.0,Q.1\n"
        "2 CVdg Q.1,Q.2\n"
        "3 CX Q.0,Q.1\n"
        "4 CV Q.0,Q.2\n"
    )


def test_parse_error_reports_line():
    text = "circuit bad\nregister q 2\n0 CX q.0\n"
    with pytest.raises(CircuitParseError) as info:
        loads(text)
    assert info.value.lineno == 3


def test_parse_comments_and_postselect():
    text = "# header\ncircuit c\nregister q 1\n0 H q.0  # comment\n1 MeasureZ q.0 -> m !\n2 Let p = xor(m, m)\n"
    c = loads(text)
    assert c.gates[1].postselect and c.gates[2].expr.evaluate({"m": 1}) == 0


# --- builders -----------------------------------------------------------------


def _run(circuit, code=CODE, **kw):
    return Executor(circuit, code, **kw).run()


def test_unencoded_single_round_structure():
    c = build_shor_prep(unencoded(), rounds=1)
    kinds = [g.kind for g in c.gates]
    assert kinds.count("CX") == 1 and kinds.count("CCX") == 1 and kinds.count("MeasureZ") == 1


def test_unencoded_prep_gives_toffoli_state():
    res = _run(build_shor_prep(unencoded(), rounds=1), code=unencoded())
    target = SparseState.from_amplitudes(
        [QubitId(r, 0) for r in ("T1", "T2", "T3")], {"000": 1, "010": 1, "100": 1, "111": 1}
    )
    assert weighted_fidelity(res.branches, target) == pytest.approx(1)


@pytest.mark.parametrize("build", [build_shor_prep, build_modified_prep])
def test_noiseless_prep_outputs_ancilla(build):
    res = _run(build(CODE, 3))
    assert res.rejected == pytest.approx(0)
    assert weighted_fidelity(res.branches, toffoli_ancilla()) == pytest.approx(1, abs=1e-12)


def test_odd_majority_branch_is_fixed():
    # forcing every parity Let to 1 makes the majority odd; the X on T3 then restores |A>
    c = build_shor_prep(CODE, 3)
    res = _run(c, flip_bits=("p1", "p2", "p3"))
    assert weighted_fidelity(res.branches, toffoli_ancilla(1)) == pytest.approx(1, abs=1e-12)


def test_modified_prep_has_bit_flip_ec_between_rounds():
    c = build_modified_prep(CODE, 3)
    layers = {m.group(1) for r in c.registers if (m := re.match(r"^S(\d+)T\d", r))}
    assert layers == {"1", "2"}
    pf = build_modified_prep(CODE, 3, insert_pfec=True)
    assert any(r.startswith("SP") for r in pf.registers)


def test_modified_prep_accepts_a_minus_b_input():
    a, b = toffoli_ancilla(0), toffoli_ancilla(1)
    amps = a.to_dict()
    for k, v in b.to_dict().items():
        amps[k] = amps.get(k, 0) - v
    joint = SparseState.from_amplitudes(a.qubits, amps)
    c = build_modified_prep(CODE, 3)
    # drop the |+> initialization and start the T blocks in |A> - |B> instead
    ex = Executor(Circuit(c.name, c.registers, c.gates, {}, c.outputs, c.rounds), CODE)
    state = ex.initial_state()
    state.tensor(joint)
    res = ex.run([Branch(state)])
    assert weighted_fidelity(res.branches, a) == pytest.approx(1, abs=1e-12)


@pytest.mark.parametrize("size", [4, 7])
def test_cat_prep_noiseless(size):
    c = build_cat_prep(size)
    res = _run(c, code=None)
    reg = c.outputs[0]
    qs = [QubitId(reg, i) for i in range(size)]
    cat = SparseState.from_amplitudes(qs, {"0" * size: 1, "1" * size: 1})
    assert res.rejected == pytest.approx(0)
    assert weighted_fidelity(res.branches, cat) == pytest.approx(1)


def test_cat_prep_single_x_fault_is_caught_or_weight_one():
    # accepted cats differ from the ideal by at most one X and one Z (a sign flip)
    c = build_cat_prep(7)
    reg = c.outputs[0]
    qs = [QubitId(reg, i) for i in range(7)]
    cat = {"0" * 7: 1, "1" * 7: 1}
    ex = Executor(c)
    for loc in locations(c):
        if loc.qubit.register != reg:
            continue
        k = c.gate_position(loc)
        inj = {ex.injection_point(loc.qubit, k): [GeneralizedError.pauli("X", loc.qubit)]}
        res = ex.run(injections=inj)
        for br in res.branches:
            best = 0.0
            for flip in [None, *range(7)]:
                for sign in (1, -1):
                    amps = {}
                    for w, a in cat.items():
                        bits = list(w)
                        if flip is not None:
                            bits[flip] = "1" if bits[flip] == "0" else "0"
                        amps["".join(bits)] = a * (sign if w[0] == "1" else 1)
                    best = max(best, fidelity(br.state, SparseState.from_amplitudes(qs, amps)))
            assert best == pytest.approx(1), loc


def _bfec_with_error(build, letter, i):
    c = build(CODE)
    ex = Executor(c, CODE)
    inj = {0: [GeneralizedError.pauli(letter, QubitId("D1", i))]} if letter else {}
    return ex.run(injections=inj)


@pytest.mark.parametrize("i", range(7))
def test_bfec_fixes_bit_flip(i):
    res = _bfec_with_error(build_bfec, "X", i)
    assert weighted_fidelity(res.branches, logical_state(CODE, "D1", "zero")) == pytest.approx(1)


def test_bfec_codespace_syndromes_zero():
    res = _bfec_with_error(build_bfec, None, 0)
    assert len(res.branches) >= 1
    for br in res.branches:
        assert all(v == 0 for k, v in br.bits.items() if k.startswith("f."))


def test_bfec_leaves_phase_flip():
    c = build_bfec(CODE, init="plus")
    res = Executor(c, CODE).run(injections={0: [GeneralizedError.pauli("Z", QubitId("D1", 2))]})
    plus = logical_state(CODE, "D1", "plus")
    assert weighted_fidelity(res.branches, plus) < 0.5
    z2 = GeneralizedError.pauli("Z", QubitId("D1", 2))
    assert weighted_fidelity(res.branches, apply_error(plus, z2)) == pytest.approx(1)


@pytest.mark.parametrize("i", [0, 6])
def test_pfec_fixes_phase_flip(i):
    c = build_pfec(CODE, init="plus")
    res = Executor(c, CODE).run(injections={0: [GeneralizedError.pauli("Z", QubitId("D1", i))]})
    assert weighted_fidelity(res.branches, logical_state(CODE, "D1", "plus")) == pytest.approx(1)


# --- decomposition ------------------------------------------------------------


def _decomposition_unitary() -> np.ndarray:
    c = build_toffoli_decomposition()
    u = np.eye(8, dtype=complex)
    for g in c.gates:
        u = gate_matrix(g.kind, tuple(x.index for x in g.qubits), 3) @ u
    return u


def test_decomposition_equals_toffoli():
    u = _decomposition_unitary()
    ccx = gate_matrix("CCX", (0, 1, 2), 3)
    phase = np.vdot(ccx.ravel(), u.ravel()) / 8
    assert abs(abs(phase) - 1) < 1e-12
    assert np.max(np.abs(u - phase * ccx)) < 1e-12


def test_v_squared_is_x():
    assert np.allclose(V @ V, X, atol=1e-12)


@given(st.integers(0, 7))
def test_decomposition_truth_table_on_simulator(x):
    qs = [QubitId("Q", i) for i in range(3)]
    bits = format(x, "03b")
    c = build_toffoli_decomposition()
    res = Executor(c, inputs={"Q": SparseState.from_amplitudes(qs, {bits: 1})}).run()
    a, b, t = (int(ch) for ch in bits)
    out = SparseState.from_amplitudes(qs, {f"{a}{b}{t ^ (a & b)}": 1})
    assert fidelity(res.branches[0].state, out) == pytest.approx(1)
