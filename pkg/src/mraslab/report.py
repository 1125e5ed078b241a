"""Pass/fail records shared by validation and verification checks."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field


@dataclass
class Entry:
    """One checked inequality.

    ``sense`` is ``"<="`` when the check is ``measured <= bound`` and ``">="``
    for ``measured >= bound``; ``slack`` is nonnegative exactly when the
    inequality holds (before ``tol``).  Advisory entries are reported but do
    not affect :attr:`VerificationReport.passed`.
    """

    name: str
    passed: bool
    measured: float
    bound: float
    slack: float
    sense: str = "<="
    location: object = None
    advisory: bool = False
    note: str = ""


def check(name, measured, bound, *, sense="<=", tol=0.0, location=None,
          advisory=False, note="") -> Entry:
    measured, bound = float(measured), float(bound)
    slack = bound - measured if sense == "<=" else measured - bound
    passed = bool(math.isfinite(slack) and slack >= -tol)
    return Entry(name, passed, measured, bound, slack, sense, location, advisory, note)


def recompute_slack(e: Entry) -> float:
    return e.bound - e.measured if e.sense == "<=" else e.measured - e.bound


@dataclass
class VerificationReport:
    entries: list[Entry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries if not e.advisory)

    def add(self, entry: Entry) -> Entry:
        self.entries.append(entry)
        return entry

    def extend(self, other: "VerificationReport") -> "VerificationReport":
        self.entries.extend(other.entries)
        self.meta.update(other.meta)
        return self

    def __getitem__(self, name: str) -> Entry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def first_failure(self) -> Entry | None:
        return next((e for e in self.entries if not e.passed and not e.advisory), None)

    def worst(self) -> Entry | None:
        if not self.entries:
            return None
        return min(self.entries, key=lambda e: e.slack if math.isfinite(e.slack) else -math.inf)

    def summary(self, name: str) -> Entry:
        """Condense a per-step report into one entry carrying the worst slack."""
        w = self.worst()
        first = self.first_failure()
        if w is None:
            return Entry(name, True, 0.0, 0.0, 0.0, note="no entries")
        note = f"{len(self.entries)} checks"
        if first is not None:
            note += f"; first failure at {first.location}"
        return Entry(name, self.passed, w.measured, w.bound, w.slack, w.sense,
                     w.location, False, note)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "meta": _jsonable(self.meta),
                "entries": [_jsonable(asdict(e)) for e in self.entries]}

    def to_text(self) -> str:
        lines = []
        for e in self.entries:
            tag = "PASS" if e.passed else ("WARN" if e.advisory else "FAIL")
            loc = "" if e.location is None else f" at {e.location}"
            note = f"  ({e.note})" if e.note else ""
            lines.append(f"[{tag}] {e.name}: measured={e.measured:.6g} {e.sense} "
                         f"bound={e.bound:.6g} slack={e.slack:.3g}{loc}{note}")
        return "\n".join(lines)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):  # numpy scalars
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_reports(reports: dict[str, VerificationReport], out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    payload = {name: rep.to_dict() for name, rep in reports.items()}
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    chunks = []
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        chunks.append(f"== {name}: {status}\n{rep.to_text()}")
    (out / "report.txt").write_text("\n\n".join(chunks) + "\n")
