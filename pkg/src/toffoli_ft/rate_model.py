"""Analytic error-rate recurrences for the concatenated Steane Toffoli gate.

Rates at level ``j + 1`` are quadratic in the level-``j`` rates, so with all
level-0 rates proportional to ``eps = p_g(0) / p_ref`` a level-``j`` rate is
``coefficient * 1e-5 * eps**(2**j)``. :func:`rate_table` reports those
coefficients.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path

THRESHOLD = Fraction(1, 21 * (1 + 4 * 21 + 8 * 21 * 21))
# Rate at which the published coefficients are evaluated: the threshold as
# printed to two significant figures. See also threshold().
TABLE_P = 1.3e-5
UNIT = 1e-5
COLUMNS = ("T1_bit", "T2_bit", "T3_bit", "T1_ph", "T2_ph", "T3_ph")


class ParamFileError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseParams:
    p_s: float = TABLE_P
    p_g: float = TABLE_P
    p_m: float | None = None
    t_T: int = 6
    t_m: int = 1

    def __post_init__(self):
        if self.p_m is None:
            object.__setattr__(self, "p_m", self.p_g)
        for name in ("p_s", "p_g", "p_m"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("t_T", "t_m"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v}")

    @classmethod
    def uniform(cls, p: float, **kw) -> NoiseParams:
        return cls(p_s=p, p_g=p, p_m=p, **kw)

    def scaled(self, factor: float) -> NoiseParams:
        return replace(self, p_s=self.p_s * factor, p_g=self.p_g * factor, p_m=self.p_m * factor)


@dataclass(frozen=True)
class ToffoliRates:
    bit: tuple[float, float, float]
    ph: tuple[float, float, float]
    level: int = 0

    def as_tuple(self) -> tuple[float, ...]:
        return (*self.bit, *self.ph)


@dataclass(frozen=True)
class CatRates:
    per_qubit_bit: float
    total_ph: float


@dataclass(frozen=True)
class PeriodRates:
    """Error rates accumulated on one ancilla qubit during periods A to D."""

    A: float
    B: float
    C: float
    D: float

    def __iter__(self):
        return iter((self.A, self.B, self.C, self.D))


def threshold() -> float:
    return float(THRESHOLD)


def ec_rate(params: NoiseParams) -> float:
    return 9 * params.p_s + 12 * params.p_g


def storage_recurrence(p: float, p_ec: float) -> float:
    return 21 * (p * p + 4 * p * p_ec + 8 * p_ec * p_ec)


def cat_rates(params: NoiseParams) -> CatRates:
    return CatRates(5 * params.p_s + params.p_g, 26 * params.p_s + 20 * params.p_g)


def base_toffoli_rates(params: NoiseParams) -> ToffoliRates:
    s, g = params.p_s, params.p_g
    return ToffoliRates(
        bit=(2 * s + 3 * g, 2 * s + 5 * g, 6 * s + 9 * g),
        ph=(4 * s + 10 * g, 3 * s + 7 * g, 3 * s + 5 * g),
        level=0,
    )


def accumulated_rates(params: NoiseParams, tof: ToffoliRates, cat: CatRates) -> dict[tuple[int, str], PeriodRates]:
    """Rates keyed by (ancilla block 1..3, "bit" or "ph")."""
    s, g, tT, tm = params.p_s, params.p_g, params.t_T, params.t_m
    t1b, t2b, _ = tof.bit
    t1p, t2p, _ = tof.ph
    cb = cat.per_qubit_bit
    out = {}
    a1, a2, a3 = s + g + t1b, s + g + t2b, tT * s + 2 * g
    b1, b2, b3 = 2 * s + t1b, 2 * s + t2b, (tT + 1) * s + g
    d12, d3 = (tm + 2) * s + 2.5 * g, (2 * tm + 3.5) * s + 4.75 * g
    out[1, "bit"] = PeriodRates(a1, b1, b1, d12)
    out[2, "bit"] = PeriodRates(a2, b2, b2, d12)
    out[3, "bit"] = PeriodRates(a3, b3, b3, d3)
    a1, a2, a3 = 2 * s + 4 * g + t1p + cb, 2 * s + 4 * g + t2p + cb, tT * s + 3 * g + cb
    b1, b2, b3 = 4 * s + 2 * g + t1p + cb, 4 * s + 2 * g + t2p + cb, (tT + 1) * s + 2 * g + cb
    out[1, "ph"] = PeriodRates(a1, b1, b1, (2 * tm + 3.75) * s + 4 * g)
    out[2, "ph"] = PeriodRates(a2, b2, b2, (2 * tm + 3.75) * s + 4.25 * g)
    out[3, "ph"] = PeriodRates(a3, b3, b3, (tm + 1.5) * s + 3 * g)
    return out


def parity_vote_error(params: NoiseParams, tof: ToffoliRates, cat: CatRates) -> float:
    s, g, m = params.p_s, params.p_g, params.p_m
    t3 = tof.bit[2]
    a = cat.total_ph + 7 * (2 * s + 5 * g + t3 + m)
    b = cat.total_ph + 7 * (5 * s + 2 * g + t3 + m)
    return 2 * a * b + b * b


# logical errors left by a faulty readout of each data block
DATA_DESTINATIONS = {
    1: ((1, "bit"), (3, "bit"), (2, "ph")),
    2: ((2, "bit"), (3, "bit"), (1, "ph")),
    3: ((1, "ph"), (2, "ph"), (3, "ph")),
}


def data_measurement_errors(params: NoiseParams) -> dict[int, tuple[float, tuple[tuple[int, str], ...]]]:
    s, g, m = params.p_s, params.p_g, params.p_m
    r12 = 21 * (s + g + m) ** 2
    r3 = 21 * (0.5 * s + 2.5 * g + m) ** 2
    return {1: (r12, DATA_DESTINATIONS[1]), 2: (r12, DATA_DESTINATIONS[2]), 3: (r3, DATA_DESTINATIONS[3])}


def next_level_rates(params: NoiseParams, tof: ToffoliRates, cat: CatRates | None = None) -> ToffoliRates:
    cat = cat if cat is not None else cat_rates(params)
    p_ec = ec_rate(params)
    acc = accumulated_rates(params, tof, cat)
    rates = {key: sum(storage_recurrence(p, p_ec) for p in periods) for key, periods in acc.items()}
    rates[3, "bit"] += parity_vote_error(params, tof, cat)
    for rate, dests in data_measurement_errors(params).values():
        for key in dests:
            rates[key] += rate
    return ToffoliRates(
        bit=tuple(rates[i, "bit"] for i in (1, 2, 3)),
        ph=tuple(rates[i, "ph"] for i in (1, 2, 3)),
        level=tof.level + 1,
    )


def level_params(base: NoiseParams, j: int, p_ref: float = TABLE_P) -> NoiseParams:
    """Physical rates seen at level ``j``: each scaled by ``eps**(2**j - 1)``."""
    eps = base.p_g / p_ref
    return base.scaled(eps ** (2**j - 1)) if j else base


@dataclass(frozen=True)
class RateTable:
    rows: tuple[tuple[float, ...], ...]
    params: NoiseParams
    p_ref: float = TABLE_P

    @property
    def levels(self) -> int:
        return len(self.rows) - 1

    def rounded(self, sig: int = 2) -> list[list[float]]:
        return [[round_sig(x, sig) for x in row] for row in self.rows]

    def transversal_ratio(self) -> tuple[float, float]:
        """Range of the last row divided by the coefficient of a single gate error."""
        gate = self.p_ref / UNIT
        last = self.rows[-1]
        return min(last) / gate, max(last) / gate

    def format(self, fmt: str = "table", sig: int | None = 2) -> str:
        rows = self.rounded(sig) if sig else [list(r) for r in self.rows]
        if fmt == "table":
            head = f"{'j':>2} " + " ".join(f"{c:>8}" for c in COLUMNS)
            body = [f"{j:>2} " + " ".join(f"{_fmt(x):>8}" for x in row) for j, row in enumerate(rows)]
            return "\n".join([head, *body])
        if fmt == "csv":
            lines = ["level," + ",".join(COLUMNS)]
            lines += [f"{j}," + ",".join(_fmt(x) for x in row) for j, row in enumerate(rows)]
            return "\n".join(lines)
        if fmt == "json":
            return json.dumps(
                {
                    "schema": 1,
                    "unit": "1e-5 * eps^(2^j)",
                    "columns": list(COLUMNS),
                    "params": asdict(self.params),
                    "p_ref": self.p_ref,
                    "rows": [{"level": j, "values": row} for j, row in enumerate(rows)],
                },
                indent=2,
            )
        raise ValueError(f"unknown format {fmt!r}")


def _fmt(x: float) -> str:
    return f"{x:g}" if x == round_sig(x, 2) else repr(x)


def rate_table(levels: int, params: NoiseParams | None = None, p_ref: float = TABLE_P) -> RateTable:
    """Normalised Toffoli rate coefficients for levels ``0..levels``.

    With the default parameters the level-0 gate rate equals ``p_ref`` and
    every level sees the same physical rates.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    params = params or NoiseParams()
    eps = params.p_g / p_ref
    tof = base_toffoli_rates(params)
    rows = []
    for j in range(levels + 1):
        norm = UNIT * eps ** (2**j)
        rows.append(tuple(x / norm for x in tof.as_tuple()))
        if j < levels:
            tof = next_level_rates(level_params(params, j, p_ref), tof)
    return RateTable(tuple(rows), params, p_ref)


def round_sig(x: float, sig: int = 2) -> float:
    """Round half away from zero to ``sig`` significant figures.

    The value is first fixed to 12 significant digits so binary noise such
    as 19.499999999999996 rounds like the intended 19.5.
    """
    if x == 0:
        return 0.0
    d = Decimal(f"{x:.12g}")
    q = Decimal(1).scaleb(d.adjusted() - sig + 1)
    return float(d.quantize(q, rounding=ROUND_HALF_UP))


def load_params(path: str | Path) -> NoiseParams:
    """Read ``key = value`` lines (``#`` comments) into :class:`NoiseParams`."""
    known = {f.name: f.type for f in fields(NoiseParams)}
    values: dict[str, float | int] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamFileError(f"{path}:{lineno}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in known:
            raise ParamFileError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = int(val) if key in ("t_T", "t_m") else float(val)
        except ValueError:
            raise ParamFileError(f"{path}:{lineno}: bad value {val!r}") from None
    try:
        return NoiseParams(**values)
    except ValueError as exc:
        raise ParamFileError(f"{path}: {exc}") from None
