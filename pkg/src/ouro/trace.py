"""Append-only evolution trace: one structured record per executed step.

Serialized records carry exactly the fixed field set below, with logical
timestamps (event ordinals), so a rerun under the same script reproduces
the file byte for byte. The in-memory events additionally carry a free-form
`detail` string used to build the next decision prompt; it is deliberately
not serialized.
"""
from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field
from pathlib import Path

TRACE_FIELDS = (
    "step",
    "depth",
    "action_kind",
    "unit_touched",
    "score_before",
    "score_after",
    "error_text",
    "cost_delta",
    "timestamp",
)


class TraceError(Exception):
    pass


@dataclass
class TraceEvent:
    step: int
    depth: int
    action_kind: str
    unit_touched: str | None = None
    score_before: float | None = None
    score_after: float | None = None
    error_text: str | None = None
    cost_delta: float = 0.0
    timestamp: float = 0.0
    detail: str = field(default="", compare=False)

    def to_json(self) -> str:
        return json.dumps({f: getattr(self, f) for f in TRACE_FIELDS}, separators=(",", ":"))


class Tracer:
    """Collects TraceEvents in order, optionally mirroring them to a file."""

    def __init__(self, path: str | Path | None = None):
        self.events: list[TraceEvent] = []
        self._path = Path(path) if path else None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._path.write_text("", encoding="utf-8")

    def record(self, event: TraceEvent) -> TraceEvent:
        self.events.append(event)
        if self._path is not None:
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(event.to_json() + "\n")
        return event

    def serialized(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)


def read_trace(path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {line_no}: invalid trace record: {exc}") from exc
            if not isinstance(rec, dict) or "action_kind" not in rec:
                raise TraceError(f"line {line_no}: not a trace record")
            records.append(rec)
    return records


def _fmt_score(value) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def _snapshot_diffs(snapshot_root: Path) -> dict[int, list[str]]:
    """Map created_by_step -> unified diff lines for each snapshot version."""
    diffs: dict[int, list[str]] = {}
    if not snapshot_root.is_dir():
        return diffs
    manifests = {}
    for vdir in sorted(snapshot_root.glob("v*")):
        mpath = vdir / "manifest.json"
        if mpath.is_file():
            manifests[json.loads(mpath.read_text(encoding="utf-8"))["version"]] = vdir
    for vdir in manifests.values():
        manifest = json.loads((vdir / "manifest.json").read_text(encoding="utf-8"))
        step = manifest.get("created_by_step")
        parent = manifest.get("parent")
        if step is None or parent is None or parent not in manifests:
            continue
        pdir = manifests[parent]
        lines: list[str] = []
        for unit_file in sorted(vdir.iterdir()):
            if unit_file.name == "manifest.json":
                continue
            old = (pdir / unit_file.name).read_text(encoding="utf-8") if (pdir / unit_file.name).is_file() else ""
            new = unit_file.read_text(encoding="utf-8")
            if old == new:
                continue
            lines.extend(
                difflib.unified_diff(
                    old.splitlines(),
                    new.splitlines(),
                    fromfile=f"v{parent}/{unit_file.name}",
                    tofile=f"v{manifest['version']}/{unit_file.name}",
                    lineterm="",
                )
            )
        if lines:
            diffs[step] = lines
    return diffs


def render_replay(trace_path, snapshot_root=None) -> str:
    """Human-readable step-by-step rendering of a trace file, with source
    diffs for patch steps when a snapshot directory sits next to the trace."""
    trace_path = Path(trace_path)
    records = read_trace(trace_path)
    if snapshot_root is None:
        snapshot_root = trace_path.parent / "snapshots"
    diffs = _snapshot_diffs(Path(snapshot_root))

    lines = [f"{len(records)} steps"]
    for rec in records:
        touched = f" unit={rec['unit_touched']}" if rec.get("unit_touched") else ""
        lines.append(
            f"step {rec['step']:>3} depth {rec['depth']} {rec['action_kind']:<17}{touched}"
            f" score {_fmt_score(rec.get('score_before'))} -> {_fmt_score(rec.get('score_after'))}"
            f" cost +{rec.get('cost_delta', 0.0):.4f}"
        )
        if rec.get("error_text"):
            lines.append(f"      error: {rec['error_text']}")
        if rec["action_kind"] == "self_update" and rec["step"] in diffs:
            lines.extend(f"      {d}" for d in diffs[rec["step"]])
    return "\n".join(lines) + "\n"
