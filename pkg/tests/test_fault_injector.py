from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toffoli_ft.circuit import Circuit, FaultLocation, Gate, QubitId, build_modified_prep, build_shor_prep, locations
from toffoli_ft.css_code import steane, unencoded
from toffoli_ft.fault_injector import (
    BENIGN,
    CORRECTABLE,
    LOGICAL,
    NON_PAULI,
    FaultScenario,
    IdealCorrector,
    ScenarioRunner,
    all_double_faults,
    analytic_state,
    analyze,
    enumerate_single_faults,
    fault_before_gate,
    fault_class,
    logical_products,
    readout_free,
    residual_class,
    UnknownResidual,
    run_scenario,
    sample_double_faults,
    simulate_with_faults,
    solve_sign_pattern,
)
from toffoli_ft.pauli_algebra import GeneralizedError
from toffoli_ft.sparse_sim import apply_error, fidelity, logical_state, product, same_up_to_phase

CODE = steane()
q = [QubitId("q", i) for i in range(3)]


@pytest.fixture(scope="module")
def shor():
    return build_shor_prep(CODE, 3)


@pytest.fixture(scope="module")
def shor_runner(shor):
    return ScenarioRunner(shor, CODE)


def between_rounds(circuit, qubit: QubitId, k: int, letter: str = "X") -> FaultScenario:
    return fault_before_gate(circuit, qubit, k, letter)


# --- scenarios and classes ------------------------------------------------------


def test_scenario_validation_and_label():
    loc = FaultLocation(0, q[0], "before")
    assert FaultScenario(((loc, "X"),)).label == "X[q.0] before t=0"
    assert FaultScenario(()).label == "no fault"
    with pytest.raises(ValueError):
        FaultScenario(((loc, "X"), (loc, "Z")))
    with pytest.raises(ValueError):
        FaultScenario(((loc, "W"),))


def test_enumerate_empty_and_single_gate():
    assert enumerate_single_faults(Circuit("empty", {}, ())) == []
    c = Circuit("one", {"q": 2}, (Gate("CX", (q[0], q[1]), 0),))
    assert len(enumerate_single_faults(c)) == 12
    assert len(all_double_faults(c)) == 6 * 9


def test_enumerate_golden_counts(shor):
    assert len(enumerate_single_faults(shor)) == 5445
    assert len(enumerate_single_faults(build_modified_prep(CODE, 3))) == 77643


def test_sample_double_faults_is_seeded(shor):
    a = sample_double_faults(shor, 20, seed=7)
    b = sample_double_faults(shor, 20, seed=7)
    assert [s.label for s in a] == [s.label for s in b]
    assert all(len(s.faults) == 2 for s in a)


def test_fault_class_slides():
    gates = (
        Gate("CX", (q[0], q[1]), 0),
        Gate("H", (q[1],), 1),
        Gate("MeasureZ", (q[0],), 1, bit="m"),
    )
    c = Circuit("slide", {"q": 2}, gates)
    # Z on the control passes the CX and then the Z measurement: it never acts
    assert fault_class(c, FaultLocation(0, q[0], "before"), "Z") is None
    # X on the target passes the CX and stops at the H
    assert fault_class(c, FaultLocation(0, q[1], "before"), "X") == (q[1], 1, "X")
    # Y commutes with neither
    assert fault_class(c, FaultLocation(0, q[1], "before"), "Y") == (q[1], 0, "Y")


def _final_states(circuit, code, scenario):
    return sorted(
        ((round(b.prob, 9), b.state) for b in simulate_with_faults(circuit, code, scenario)), key=lambda t: t[0]
    )


@settings(max_examples=25)
@given(st.data())
def test_equivalent_faults_give_identical_outputs(data):
    # slide each fault to its class position and compare with the raw injection
    c = build_shor_prep(unencoded(), 3)
    locs = locations(c)
    loc = data.draw(st.sampled_from(locs))
    letter = data.draw(st.sampled_from("XYZ"))
    raw = FaultScenario(((loc, letter),))
    cls = fault_class(c, loc, letter)
    if cls is None:
        slid = FaultScenario(())
    else:
        qubit, k, _ = cls
        slid = fault_before_gate(c, qubit, k, letter)
    a, b = _final_states(c, unencoded(), raw), _final_states(c, unencoded(), slid)
    assert len(a) == len(b)
    for (pa, sa), (pb, sb) in zip(a, b):
        assert pa == pytest.approx(pb)
        assert same_up_to_phase(sa, sb)


# --- ideal correction and classification ----------------------------------------


def test_logical_products_count():
    prods = logical_products(CODE, ("T1", "T2", "T3"))
    assert len(prods) == 63
    assert prods[0][0] == "Xbar[T3]"


@pytest.mark.parametrize("letter", "XYZ")
@pytest.mark.parametrize("i", [0, 3, 6])
def test_ideal_corrector_fixes_single_errors(letter, i):
    plus = logical_state(CODE, "D", "plus")
    err = GeneralizedError.pauli(letter, QubitId("D", i))
    branches = IdealCorrector(CODE, ("D",))(apply_error(plus, err))
    assert sum(p for p, _ in branches) == pytest.approx(1)
    assert all(fidelity(s, plus) == pytest.approx(1) for _, s in branches)


def test_residual_class_labels():
    zero = product(logical_state(CODE, "T1", "zero"), logical_state(CODE, "T2", "plus"))
    prods = logical_products(CODE, ("T1", "T2"))
    x1 = dict((lab, e) for lab, e in prods)["Xbar[T1]"]
    assert residual_class(zero, zero, prods) is None
    assert residual_class(apply_error(zero, x1), zero, prods) == "Xbar[T1]"
    with pytest.raises(UnknownResidual):
        residual_class(apply_error(zero, GeneralizedError.pauli("X", QubitId("T1", 0))), zero, prods)


def test_solve_sign_pattern():
    keys = np.array([0b000, 0b011, 0b101, 0b110], dtype=np.uint64)
    signs = np.array([0, 1, 0, 1], dtype=np.uint8)  # parity of bit 1
    assert solve_sign_pattern(keys, signs, 0b111) in (0b010, 0b101 ^ 0b111)
    assert solve_sign_pattern(keys, signs, 0b001) is None


# --- shor preparation ----------------------------------------------------------


def test_empty_scenario_on_modified_is_benign():
    v = run_scenario(build_modified_prep(CODE, 3), FaultScenario(()), CODE)
    assert v.classification == BENIGN
    assert sum(o.record.branch_probability for o in v.branch_outcomes) == pytest.approx(1)


@pytest.mark.parametrize("k", [0, 1])
def test_t3_flip_between_rounds_is_logical(shor, shor_runner, k):
    v = shor_runner.run(between_rounds(shor, QubitId("T3", 2), k))
    assert v.classification == LOGICAL
    assert v.logical_probability == pytest.approx(1, abs=1e-9)
    assert set(v.logical_classes()) == {"Xbar[T3]"}


def test_t1_flip_after_first_round_is_half_logical(shor, shor_runner):
    v = shor_runner.run(between_rounds(shor, QubitId("T1", 4), 1))
    assert v.logical_probability == pytest.approx(0.5, abs=1e-9)
    assert set(v.logical_classes()) == {"Xbar[T3]"}


def test_t1_flip_before_first_round_is_logical(shor, shor_runner):
    v = shor_runner.run(between_rounds(shor, QubitId("T1", 4), 0))
    assert v.classification == LOGICAL
    assert v.logical_probability == pytest.approx(1, abs=1e-9)
    assert set(v.logical_classes()) == {NON_PAULI}


def test_late_t1_flip_is_correctable(shor, shor_runner):
    v = shor_runner.run(between_rounds(shor, QubitId("T1", 4), 3))
    assert v.classification == CORRECTABLE


@pytest.mark.parametrize("k", [0, 1, 2])
def test_early_exit_agrees_with_full_run(shor, k):
    sc = between_rounds(shor, QubitId("T2", 1), k, "Y")
    fast = ScenarioRunner(shor, CODE).run(sc)
    slow = ScenarioRunner(shor, CODE, early_exit=False).run(sc)
    assert fast.classification == slow.classification
    assert fast.logical_probability == pytest.approx(slow.logical_probability, abs=1e-9)


def test_verdict_json_schema(shor, shor_runner):
    d = shor_runner.run(between_rounds(shor, QubitId("T3", 0), 0)).to_dict()
    assert {"label", "faults", "classification", "logical_probability", "branches"} <= set(d)
    assert d["faults"][0]["qubit"] == "T3.0"
    json.dumps(d)


# --- analyze -----------------------------------------------------------------------


def _storage_circuit():
    d = [QubitId("D", i) for i in range(7)]
    gates = tuple(Gate("Barrier", tuple(d), t) for t in range(2))
    return Circuit("storage", {"D": 7}, gates, {"D": "plus"}, ("D",))


def test_analyze_storage_only():
    rep = analyze(_storage_circuit(), CODE)
    assert rep.scenario_count == len(locations(_storage_circuit())) * 3
    assert rep.totals[LOGICAL] == 0
    assert rep.totals[BENIGN] + rep.totals[CORRECTABLE] == rep.scenario_count


def test_analyze_unencoded_is_deterministic_across_workers():
    c = build_shor_prep(unencoded(), 3)
    a = analyze(c, unencoded(), workers=1)
    b = analyze(c, unencoded(), workers=2)
    assert a.to_json() == b.to_json()
    assert a.has_logical


def test_analyze_sampling():
    c = build_shor_prep(unencoded(), 3)
    rep = analyze(c, unencoded(), order=2, sample_budget=10, seed=3)
    assert rep.sampled and rep.scenario_count == 10
    assert analyze(c, unencoded(), order=2, sample_budget=10, seed=3).to_json() == rep.to_json()
    empty = analyze(c, unencoded(), order=2, sample_budget=0, seed=3)
    assert empty.scenario_count == 0 and not empty.has_logical


def test_analyze_rejects_bad_order():
    with pytest.raises(ValueError):
        analyze(build_shor_prep(unencoded(), 1), unencoded(), order=3)


def test_report_table_lists_offenders():
    c = build_shor_prep(unencoded(), 3)
    rep = analyze(c, unencoded())
    text = rep.to_table(limit=None)
    assert f"logical {rep.totals[LOGICAL]}" in text
    assert all(v.scenario.label in text for v in rep.offending)
    assert any(v.scenario.label.startswith("X[T3.0]") for v in rep.offending)


# --- analytic states -------------------------------------------------------------------


def test_expanded_form_equals_projector_form():
    for i in (0, 5):
        s_proj, s_exp = analytic_state("cx_error", i, CODE), analytic_state("cx_error_expanded", i, CODE)
        assert same_up_to_phase(s_proj, s_exp, tol=1e-12)
        d2, d4 = s_proj.to_dict(), s_exp.to_dict()
        assert d2.keys() == d4.keys()
        assert np.allclose([d2[k] for k in d2], [d4[k] for k in d2], rtol=0, atol=1e-15)


def test_late_flip_k0_single_round_is_cx_error():
    for frame in ("physical", "cat"):
        s_late = analytic_state("late_flip", 2, CODE, k=0, rounds=1, frame=frame)
        s_proj = analytic_state("cx_error", 2, CODE, frame=frame)
        assert fidelity(s_late, s_proj) == pytest.approx(1, abs=1e-12)


def test_analytic_state_is_normalized():
    s = analytic_state("cx_error", 0, CODE)
    assert fidelity(s, s) == pytest.approx(1)
    assert s.norm() == pytest.approx(1)


@pytest.mark.parametrize("kwargs", [dict(kind="unknown", i=0), dict(kind="cx_error", i=7), dict(kind="late_flip", i=0, k=2)])
def test_analytic_state_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        analytic_state(code=CODE, **kwargs)


def test_late_flip_matches_simulation_cat_frame():
    circ = readout_free(build_shor_prep(CODE, 3), "cat")
    sc = fault_before_gate(circ, QubitId("T1", 3), 1)
    branches = simulate_with_faults(circ, CODE, sc)
    assert len(branches) == 1
    assert fidelity(branches[0].state, analytic_state("late_flip", 3, CODE, k=1, frame="cat")) > 1 - 1e-10
