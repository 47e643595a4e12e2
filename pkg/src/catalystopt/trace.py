"""Cost-indexed convergence traces and their CSV / JSON serialization."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

COLUMNS = ("cost", "epoch", "objective", "certificate", "envelope", "wallclock_ns")


@dataclass
class TraceRow:
    cost: int
    epoch: float
    objective: float
    certificate: float | None = None
    envelope: float | None = None
    wallclock_ns: int | None = None


@dataclass
class RunTrace:
    """Rows of (cost, epoch, F(x), certificate, envelope, wall clock).

    ``cost`` counts component-gradient evaluations; one epoch is ``n`` units.
    ``meta`` carries everything needed to reproduce the run.
    """

    n: int
    rows: list[TraceRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def record(self, cost, objective, certificate=None, envelope=None, wallclock_ns=None):
        if not math.isfinite(objective):
            raise FloatingPointError(f"non-finite objective {objective} at cost {cost}")
        if self.rows and cost <= self.rows[-1].cost:
            # same cost re-recorded (e.g. zero-step inner solve): keep the latest
            if cost == self.rows[-1].cost:
                self.rows.pop()
            else:
                raise ValueError("trace cost must be nondecreasing")
        self.rows.append(
            TraceRow(int(cost), cost / self.n, float(objective), certificate, envelope, wallclock_ns)
        )

    def extend(self, other: RunTrace, cost_offset=0):
        for r in other.rows:
            self.record(r.cost + cost_offset, r.objective, r.certificate, r.envelope, r.wallclock_ns)

    @property
    def costs(self):
        return [r.cost for r in self.rows]

    @property
    def epochs(self):
        return [r.epoch for r in self.rows]

    @property
    def objectives(self):
        return [r.objective for r in self.rows]

    @property
    def certificates(self):
        return [r.certificate for r in self.rows]

    def __len__(self):
        return len(self.rows)

    # -- serialization -----------------------------------------------------

    def to_csv(self, extra_columns=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        extra = extra_columns or {}
        w.writerow(list(COLUMNS) + list(extra))
        for j, r in enumerate(self.rows):
            vals = [getattr(r, c) for c in COLUMNS] + [col[j] for col in extra.values()]
            w.writerow([_fmt(v) for v in vals])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "meta": self.meta,
            "columns": list(COLUMNS),
            "rows": [[getattr(r, c) for c in COLUMNS] for r in self.rows],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str, n: int | None = None) -> RunTrace:
        rows = list(csv.DictReader(io.StringIO(text)))
        if n is None:
            n = _infer_n(rows)
        tr = cls(n=n)
        for r in rows:
            tr.rows.append(
                TraceRow(
                    int(r["cost"]),
                    float(r["epoch"]),
                    float(r["objective"]),
                    _opt_float(r.get("certificate")),
                    _opt_float(r.get("envelope")),
                    None if not r.get("wallclock_ns") else int(r["wallclock_ns"]),
                )
            )
        return tr

    @classmethod
    def from_json(cls, text: str) -> RunTrace:
        doc = json.loads(text)
        meta = doc.get("meta", {})
        cols = doc["columns"]
        tr = cls(n=int(doc.get("n", meta.get("n", 1))), meta=meta)
        for vals in doc["rows"]:
            tr.rows.append(TraceRow(**dict(zip(cols, vals))))
        return tr


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _opt_float(s):
    return None if s is None or s == "" else float(s)


def _infer_n(rows):
    for r in rows:
        c, e = int(r["cost"]), float(r["epoch"])
        if c > 0 and e > 0:
            return max(1, round(c / e))
    return 1
