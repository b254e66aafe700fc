from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from toffoli_ft.css_code import (
    CodeFileError,
    CssCode,
    NotInNormalizer,
    UnknownSyndrome,
    correct,
    decode,
    load_code,
    logical_effect,
    make_code,
    steane,
    syndrome,
    unencoded,
    validate_css,
    validate_family,
)
from toffoli_ft.pauli_algebra import PauliOperator, commutes, weight

CODE = steane()


def single(q: int, letter: str) -> PauliOperator:
    return PauliOperator.single(7, q, letter)


def test_steane_parameters():
    assert (CODE.n, CODE.k, CODE.d, CODE.t) == (7, 1, 3, 1)


def test_stabilizer_generators_have_weight_four():
    gens = CODE.stabilizers()
    assert len(gens) == 6
    assert all(weight(g) == 4 for g in gens)


def test_minimum_logical_weight_brute_force():
    # smallest X-type operator commuting with every Z check that is not an X stabilizer
    stab_span = {tuple(np.array(c) @ CODE.h_x % 2) for c in itertools.product((0, 1), repeat=3)}
    best = min(
        sum(v)
        for v in itertools.product((0, 1), repeat=7)
        if not np.any(CODE.h_z @ np.array(v) % 2) and tuple(v) not in stab_span
    )
    assert best == 3
    assert sum(CODE.logical_x) == 3 and sum(CODE.logical_z) == 3


def test_css_conditions():
    assert validate_css(CODE)
    assert not np.any(CODE.h_x.astype(int) @ CODE.h_z.T % 2)


def test_validate_family():
    assert validate_family(CODE)
    assert validate_family(unencoded())


def test_validate_family_rejects_odd_stabilizer():
    h = CODE.h_x.copy()
    h[0] = [1, 1, 1, 0, 0, 0, 0]
    bad = CssCode("odd", h, CODE.h_z, CODE.logical_x, CODE.logical_z, 3)
    assert not validate_family(bad)


def test_validate_family_with_shifted_logical():
    lx = tuple(int(a) ^ int(b) for a, b in zip(CODE.logical_x, CODE.h_x[0]))
    shifted = CssCode("shifted", CODE.h_x, CODE.h_z, lx, CODE.logical_z, 3)
    assert validate_family(shifted)
    assert logical_effect(CODE, PauliOperator(lx, (0,) * 7)) == "X"


def test_syndrome_identity_and_stabilizers():
    assert syndrome(CODE, PauliOperator.identity(7)) == syndrome(CODE, CODE.stabilizers()[0])
    assert not any(syndrome(CODE, PauliOperator.identity(7)).x_bits)
    for s in CODE.stabilizers():
        syn = syndrome(CODE, s)
        assert not any(syn.x_bits) and not any(syn.z_bits)


@pytest.mark.parametrize("q", range(7))
def test_syndrome_of_x_is_column_of_hz(q):
    syn = syndrome(CODE, single(q, "X"))
    assert syn.x_bits == tuple(int(b) for b in CODE.h_z[:, q])
    # brute force: bit j is set iff X_q anticommutes with the j-th Z check
    for j, row in enumerate(CODE.h_z):
        check = PauliOperator((0,) * 7, tuple(row))
        assert syn.x_bits[j] == (not commutes(check, single(q, "X")))


def test_decode_zero_and_single():
    zero = syndrome(CODE, PauliOperator.identity(7))
    assert weight(decode(CODE, zero)) == 0
    x3 = single(3, "X")
    assert decode(CODE, syndrome(CODE, x3)).label() == x3.label()


def test_decode_weight_two_gives_logical():
    e = single(1, "X") * single(2, "X")
    fix = decode(CODE, syndrome(CODE, e))
    assert weight(fix) == 1
    assert logical_effect(CODE, correct(CODE, e)) == "X"


def test_decode_unknown_syndrome():
    from toffoli_ft.css_code import Syndrome

    with pytest.raises(UnknownSyndrome):
        decode(CODE, Syndrome((1, 1, 1, 1), (0, 0, 0)))


@pytest.mark.parametrize("q,letter", [(q, l) for q in range(7) for l in "XYZ"])
def test_every_single_pauli_is_corrected(q, letter):
    assert logical_effect(CODE, correct(CODE, single(q, letter))) == "I"


def test_logical_effect_classes():
    zeros = (0,) * 7
    lx = PauliOperator(CODE.logical_x, zeros)
    lz = PauliOperator(zeros, CODE.logical_z)
    assert logical_effect(CODE, CODE.stabilizers()[3]) == "I"
    assert logical_effect(CODE, lx) == "X"
    assert logical_effect(CODE, lz) == "Z"
    assert logical_effect(CODE, lx * lz) == "Y"
    with pytest.raises(NotInNormalizer):
        logical_effect(CODE, single(0, "X"))


@given(st.lists(st.sampled_from([(q, l) for q in range(7) for l in "XZ"]), max_size=3), st.integers(0, 63))
def test_correct_leaves_codespace_normalizer(errs, stab_mask):
    e = PauliOperator.identity(7)
    for q, l in errs:
        e = single(q, l) * e
    for j, s in enumerate(CODE.stabilizers()):
        if stab_mask >> j & 1:
            e = s * e
    r = correct(CODE, e)
    syn = syndrome(CODE, r)
    assert not any(syn.x_bits) and not any(syn.z_bits)


def test_codewords():
    zero, one = CODE.codewords(0), CODE.codewords(1)
    assert len(zero) == len(one) == 8
    assert all(sum(w) % 2 == 0 for w in zero)
    assert all(sum(w) % 2 == 1 for w in one)
    assert not set(zero) & set(one)


def test_make_code_infers_distance():
    c = make_code("again", CODE.h_x, CODE.h_z)
    assert c.d == 3 and c.k == 1


def test_load_code(tmp_path):
    rows = "\n".join("".join(map(str, r)) for r in CODE.h_x)
    p = tmp_path / "steane.txt"
    p.write_text(f"[hx]\n{rows}\n[hz]\n{rows}\n")
    c = load_code(p)
    assert c.n == 7 and c.d == 3 and validate_family(c)
    bad = tmp_path / "bad.txt"
    bad.write_text("[hx]\n012\n")
    with pytest.raises(CodeFileError):
        load_code(bad)
    missing = tmp_path / "missing.txt"
    missing.write_text("[hx]\n0110\n")
    with pytest.raises(CodeFileError):
        load_code(missing)
