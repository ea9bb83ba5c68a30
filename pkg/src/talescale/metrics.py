"""Run metrics and report emission.

Counters are maintained live by the components that own them and snap-
shotted into a ScenarioMetrics at the end of a run; the event trace stays
the authority, and tests recount every counter from it.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .errors import ValidationError

CSV_HEADER = ("model", "seed", "time_to_frontend_s", "queries", "handshakes", "transfers")

REPORT_FORMATS = ("table", "json", "csv")


@dataclass
class ScenarioMetrics:
    time_to_frontend: dict[str, list[float]] = field(default_factory=dict)
    backend_queries: dict[str, int] = field(default_factory=dict)
    handshakes: int = 0
    transfers: int = 0
    transfer_bytes: int = 0
    poll_failures: int = 0
    workload_start_latencies: list[float] = field(default_factory=list)

    def validate(self) -> None:
        counters = [self.handshakes, self.transfers, self.transfer_bytes, self.poll_failures]
        counters += list(self.backend_queries.values())
        if any(c < 0 for c in counters):
            raise ValidationError("metrics counters must be non-negative")

    def to_dict(self) -> dict:
        return {
            "time_to_frontend": {k: list(v) for k, v in sorted(self.time_to_frontend.items())},
            "backend_queries": dict(sorted(self.backend_queries.items())),
            "handshakes": self.handshakes,
            "transfers": self.transfers,
            "transfer_bytes": self.transfer_bytes,
            "poll_failures": self.poll_failures,
            "workload_start_latencies": list(self.workload_start_latencies),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioMetrics":
        return cls(
            time_to_frontend={k: list(v) for k, v in raw.get("time_to_frontend", {}).items()},
            backend_queries=dict(raw.get("backend_queries", {})),
            handshakes=raw.get("handshakes", 0),
            transfers=raw.get("transfers", 0),
            transfer_bytes=raw.get("transfer_bytes", 0),
            poll_failures=raw.get("poll_failures", 0),
            workload_start_latencies=list(raw.get("workload_start_latencies", [])),
        )


@dataclass(frozen=True)
class ReportRow:
    model: str
    seed: int
    time_to_frontend_s: float
    queries: int
    handshakes: int
    transfers: int

    def as_tuple(self):
        return (self.model, self.seed, self.time_to_frontend_s,
                self.queries, self.handshakes, self.transfers)

    def to_dict(self) -> dict:
        return dict(zip(CSV_HEADER, self.as_tuple()))


@dataclass
class ReportTable:
    rows: list[ReportRow] = field(default_factory=list)

    def samples(self, model: str) -> list[float]:
        return [r.time_to_frontend_s for r in self.rows if r.model == model]

    def models(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    @classmethod
    def from_rows(cls, dicts: list[dict]) -> "ReportTable":
        return cls(rows=[
            ReportRow(
                model=d["model"], seed=int(d["seed"]),
                time_to_frontend_s=float(d["time_to_frontend_s"]),
                queries=int(d["queries"]), handshakes=int(d["handshakes"]),
                transfers=int(d["transfers"]),
            ) for d in dicts
        ])


def emit_report(table: ReportTable, fmt: str = "table") -> bytes:
    """Render a report with stable column order; deterministic bytes."""
    if fmt not in REPORT_FORMATS:
        raise ValidationError(f"unknown report format {fmt!r}; use one of {REPORT_FORMATS}")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in table.rows:
            writer.writerow(row.as_tuple())
        return buf.getvalue().encode("utf-8")
    if fmt == "json":
        return (json.dumps([r.to_dict() for r in table.rows], sort_keys=True, indent=2) + "\n").encode()
    # fixed-width text table
    cells = [list(map(str, CSV_HEADER))] + [list(map(str, r.as_tuple())) for r in table.rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(CSV_HEADER))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_report(data: bytes) -> ReportTable:
    return ReportTable.from_rows(json.loads(data.decode("utf-8")))


def median(values) -> float:
    import statistics

    return statistics.median(values)
