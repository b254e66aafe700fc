"""Shared test fixtures built independently of the package's constructors."""

from __future__ import annotations

import itertools

from toffoli_ft.circuit import QubitId
from toffoli_ft.sparse_sim import SparseState, fidelity


def hamming_codewords(value: int) -> list[tuple[int, ...]]:
    """Steane |0>/|1> support: even/odd-weight words of the Hamming(7,4) code."""
    words = []
    for bits in itertools.product((0, 1), repeat=7):
        syndrome = [bits[3] ^ bits[4] ^ bits[5] ^ bits[6], bits[1] ^ bits[2] ^ bits[5] ^ bits[6], bits[0] ^ bits[2] ^ bits[4] ^ bits[6]]
        if not any(syndrome) and sum(bits) % 2 == value:
            words.append(bits)
    return words


def toffoli_ancilla(flip: int = 0, registers=("T1", "T2", "T3")) -> SparseState:
    """sum over a, b of |a, b, ab xor flip> encoded in three Steane blocks."""
    amps = {}
    for a, b in itertools.product((0, 1), repeat=2):
        for w1, w2, w3 in itertools.product(hamming_codewords(a), hamming_codewords(b), hamming_codewords((a & b) ^ flip)):
            amps["".join(map(str, w1 + w2 + w3))] = 1.0
    qubits = [QubitId(r, i) for r in registers for i in range(7)]
    return SparseState.from_amplitudes(qubits, amps)


def weighted_fidelity(branches, target: SparseState) -> float:
    """Probability-weighted fidelity of the accepted branches with ``target``."""
    total = sum(br.prob for br in branches)
    return sum(br.prob * fidelity(br.state, target) for br in branches) / total
