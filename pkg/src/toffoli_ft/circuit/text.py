"""Line-oriented circuit text format.

Header lines::

    circuit NAME
    register NAME SIZE
    init REGISTER STATE
    output REGISTER [REGISTER ...]
    rounds N

Gate lines (one per gate, ``#`` starts a comment)::

    TIMESTEP KIND [OPERAND[,OPERAND...]] [-> BIT [!]] [?CONDITION]
    TIMESTEP Let BIT = EXPR [?CONDITION]

``!`` marks a post-selected measurement (accepted only when it reads 0).
"""

from __future__ import annotations

from .expr import ExprSyntaxError, parse_expr
from .ir import Circuit, CircuitError, Gate, QubitId


class CircuitParseError(CircuitError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def format_gate(g: Gate) -> str:
    parts = [str(g.timestep), g.kind]
    if g.kind == "Let":
        parts += [g.bit, "=", str(g.expr)]
    else:
        if g.qubits:
            parts.append(",".join(str(q) for q in g.qubits))
        if g.bit:
            parts += ["->", g.bit]
            if g.postselect:
                parts.append("!")
    if g.condition is not None:
        parts.append(f"?{g.condition}")
    return " ".join(parts)


def dumps(c: Circuit) -> str:
    lines = [f"circuit {c.name}"]
    lines += [f"register {r} {n}" for r, n in c.registers.items()]
    lines += [f"init {r} {s}" for r, s in c.initial.items()]
    if c.outputs:
        lines.append("output " + " ".join(c.outputs))
    if c.rounds:
        lines.append(f"rounds {c.rounds}")
    lines += [format_gate(g) for g in c.gates]
    return "\n".join(lines) + "\n"


def _parse_gate(line: str, lineno: int) -> Gate:
    condition = None
    if " ?" in line:
        line, cond_text = line.split(" ?", 1)
        condition = parse_expr(cond_text)
    fields = line.split()
    if len(fields) < 2:
        raise CircuitParseError(lineno, "expected 'TIMESTEP KIND ...'")
    try:
        ts = int(fields[0])
    except ValueError:
        raise CircuitParseError(lineno, f"bad timestep {fields[0]!r}") from None
    kind = fields[1]
    rest = fields[2:]
    if kind == "Let":
        if len(rest) < 3 or rest[1] != "=":
            raise CircuitParseError(lineno, "expected 'Let BIT = EXPR'")
        return Gate("Let", (), ts, bit=rest[0], expr=parse_expr(" ".join(rest[2:])), condition=condition)
    qubits: tuple[QubitId, ...] = ()
    if rest and rest[0] != "->":
        qubits = tuple(QubitId.parse(q) for q in rest[0].split(","))
        rest = rest[1:]
    bit = None
    postselect = False
    if rest:
        if rest[0] != "->" or len(rest) < 2:
            raise CircuitParseError(lineno, f"unexpected {' '.join(rest)!r}")
        bit = rest[1]
        postselect = rest[2:] == ["!"]
        if rest[2:] not in ([], ["!"]):
            raise CircuitParseError(lineno, f"unexpected {' '.join(rest[2:])!r}")
    return Gate(kind, qubits, ts, bit=bit, condition=condition, postselect=postselect)


def loads(text: str) -> Circuit:
    name = "circuit"
    registers: dict[str, int] = {}
    initial: dict[str, str] = {}
    outputs: tuple[str, ...] = ()
    rounds = 0
    gates = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        try:
            if head == "circuit":
                name = args[0]
            elif head == "register":
                registers[args[0]] = int(args[1])
            elif head == "init":
                initial[args[0]] = args[1]
            elif head == "output":
                outputs = tuple(args)
            elif head == "rounds":
                rounds = int(args[0])
            else:
                gate = _parse_gate(line, lineno)
                gate.check()
                gates.append(gate)
        except CircuitParseError:
            raise
        except (IndexError, ValueError, ExprSyntaxError) as exc:
            raise CircuitParseError(lineno, str(exc)) from None
    c = Circuit(name, registers, tuple(gates), initial, outputs, rounds)
    try:
        c.validate()
    except CircuitError as exc:
        raise CircuitParseError(0, str(exc)) from None
    return c
