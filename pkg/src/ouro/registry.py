"""Live code registry: named logic units stored as source, swapped atomically.

The registry is the agent's self-representation. Every behavioral part of
the agent (the solver, the decision step, the action dispatcher, the error
handler) lives here as a named unit of source text plus its compiled
callable. Units are replaced through a single validated compile-and-swap
primitive; that primitive itself is the one thing a patch may not touch,
so a broken self-edit can always be rolled back.

Version lineage is append-only: every accepted patch and every rollback
creates a new version node holding full source snapshots.
"""
from __future__ import annotations

import copy
import inspect
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

ROLE_TAGS = ("solver", "learner", "tool", "helper")

# The trusted floor: the compile-and-swap primitive cannot be patched,
# otherwise one bad edit could make the agent permanently unrecoverable.
FORBIDDEN_UNITS = frozenset({"apply_patch"})


class RegistryError(Exception):
    pass


class UnknownUnitError(RegistryError):
    pass


class UnknownVersionError(RegistryError):
    pass


@dataclass
class LogicUnit:
    name: str
    source: str
    role_tag: str
    compiled: object
    created_at_version: int
    min_args: int = 0
    max_args: int | None = None

    def accepts(self, n_args: int) -> bool:
        if n_args < self.min_args:
            return False
        return self.max_args is None or n_args <= self.max_args


@dataclass
class SourceMap:
    """Complete self-representation at one version."""

    version: int
    parent_version: int | None
    units: dict[str, LogicUnit]
    lineage_note: str = ""

    def sources(self) -> dict[str, str]:
        return {name: u.source for name, u in self.units.items()}


@dataclass
class PatchResult:
    accepted: bool
    new_version: int | None = None
    diagnostic: str = ""


@dataclass
class _VersionNode:
    version: int
    parent: int | None
    note: str
    created_by_step: int | None
    sources: dict[str, str]
    roles: dict[str, str]
    score: float | None = None


def _compile_unit(name: str, source: str) -> tuple[object, int, int | None]:
    """Compile `source` in a fresh namespace and return the callable.

    The source must define a callable bound to exactly `name`. Units are
    self-contained: anything they need beyond builtins they import
    themselves, and all collaboration happens through their arguments.
    """
    if not source or not source.strip():
        raise ValueError("empty source")
    namespace: dict = {"__builtins__": __builtins__}
    code = compile(source, f"<unit:{name}>", "exec")
    exec(code, namespace)
    fn = namespace.get(name)
    if not callable(fn):
        raise TypeError(f"source defines no callable named {name!r}")
    try:
        sig = inspect.signature(fn)
    except (TypeError, ValueError):
        return fn, 0, None
    min_args = 0
    max_args: int | None = 0
    for param in sig.parameters.values():
        if param.kind in (param.POSITIONAL_ONLY, param.POSITIONAL_OR_KEYWORD):
            if param.default is param.empty:
                min_args += 1
            if max_args is not None:
                max_args += 1
        elif param.kind == param.VAR_POSITIONAL:
            max_args = None
    return fn, min_args, max_args


class CodeRegistry:
    """Versioned store of logic units with validated live replacement."""

    def __init__(self, seeds: list[tuple[str, str, str]], snapshot_dir: str | Path | None = None):
        """Build version 0 from `seeds`: (name, source, role_tag) triples."""
        self._lock = threading.RLock()
        self._units: dict[str, LogicUnit] = {}
        self._versions: dict[int, _VersionNode] = {}
        self._version = 0
        self._snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        for name, source, role_tag in seeds:
            if role_tag not in ROLE_TAGS:
                raise ValueError(f"unknown role_tag {role_tag!r} for unit {name!r}")
            if name in self._units:
                raise ValueError(f"duplicate unit name {name!r}")
            if name in FORBIDDEN_UNITS:
                raise ValueError(f"unit name {name!r} is reserved")
            fn, min_args, max_args = _compile_unit(name, source)
            self._units[name] = LogicUnit(name, source, role_tag, fn, 0, min_args, max_args)
        self._record_version(parent=None, note="initialization", step=None)

    @classmethod
    def from_source_map(cls, source_map: SourceMap, snapshot_dir=None) -> "CodeRegistry":
        """Reconstruct a fresh registry (at version 0) from an inspection."""
        seeds = [(u.name, u.source, u.role_tag) for u in source_map.units.values()]
        return cls(seeds, snapshot_dir=snapshot_dir)

    # -- inspection ---------------------------------------------------------

    @property
    def version(self) -> int:
        with self._lock:
            return self._version

    def self_inspect(self) -> SourceMap:
        """The complete current source map, including the learner units."""
        with self._lock:
            node = self._versions[self._version]
            units = {name: copy.copy(unit) for name, unit in self._units.items()}
            return SourceMap(
                version=self._version,
                parent_version=node.parent,
                units=units,
                lineage_note=node.note,
            )

    def get(self, name: str) -> LogicUnit:
        with self._lock:
            if name not in self._units:
                raise UnknownUnitError(f"no unit named {name!r}; have {sorted(self._units)}")
            return self._units[name]

    def unit_names(self) -> list[str]:
        with self._lock:
            return sorted(self._units)

    def call(self, name: str, *args, **kwargs):
        """Invoke a unit through the registry, so patches bind at next call."""
        fn = self.get(name).compiled
        return fn(*args, **kwargs)

    def source_hash(self) -> str:
        import hashlib

        with self._lock:
            blob = json.dumps({n: u.source for n, u in sorted(self._units.items())}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    # -- mutation -----------------------------------------------------------

    def apply_patch(self, unit_name: str, new_source: str, note: str = "", step: int | None = None) -> PatchResult:
        """Validated compile-and-swap. Rejections leave the registry untouched.

        Replacing a known unit keeps its role tag and must preserve its call
        arity. An unknown name creates a new helper unit. The swap primitive
        itself is off-limits.
        """
        if unit_name in FORBIDDEN_UNITS:
            return PatchResult(False, diagnostic=f"forbidden_unit: {unit_name!r} is the trusted swap primitive")
        if not new_source or not new_source.strip():
            return PatchResult(False, diagnostic="rejected_compile: empty source")
        try:
            fn, min_args, max_args = _compile_unit(unit_name, new_source)
        except SyntaxError as exc:
            return PatchResult(False, diagnostic=f"rejected_compile: {exc}")
        except (TypeError, ValueError) as exc:
            return PatchResult(False, diagnostic=f"rejected_validation: {exc}")
        except Exception as exc:  # import errors etc. raised at module top level
            return PatchResult(False, diagnostic=f"rejected_compile: {type(exc).__name__}: {exc}")

        with self._lock:
            existing = self._units.get(unit_name)
            if existing is not None:
                declared = max(existing.min_args, 1)
                probe = LogicUnit(unit_name, new_source, existing.role_tag, fn, 0, min_args, max_args)
                if not probe.accepts(declared):
                    return PatchResult(
                        False,
                        diagnostic=(
                            f"rejected_validation: {unit_name!r} must accept {declared} positional "
                            f"argument(s); replacement accepts [{min_args}, {max_args}]"
                        ),
                    )
                role_tag = existing.role_tag
            else:
                role_tag = "helper"
            new_version = self._version + 1
            self._units[unit_name] = LogicUnit(
                unit_name, new_source, role_tag, fn, new_version, min_args, max_args
            )
            self._version = new_version
            self._record_version(
                parent=new_version - 1,
                note=note or f"patch {unit_name}",
                step=step,
            )
            return PatchResult(True, new_version=new_version)

    def rollback(self, target_version: int, note: str = "", step: int | None = None) -> SourceMap:
        """Restore the snapshot of `target_version` as a new lineage node."""
        with self._lock:
            if target_version not in self._versions:
                raise UnknownVersionError(
                    f"unknown_version: {target_version} (have 0..{self._version})"
                )
            node = self._versions[target_version]
            restored: dict[str, LogicUnit] = {}
            new_version = self._version + 1
            for name, source in node.sources.items():
                fn, min_args, max_args = _compile_unit(name, source)
                restored[name] = LogicUnit(
                    name, source, node.roles[name], fn, new_version, min_args, max_args
                )
            self._units = restored
            self._version = new_version
            self._record_version(
                parent=target_version,
                note=note or f"rollback to v{target_version}",
                step=step,
            )
            return self.self_inspect()

    # -- lineage ------------------------------------------------------------

    def lineage(self) -> dict[int, dict]:
        """Parent-pointer tree of all versions with any recorded scores."""
        with self._lock:
            return {
                v: {
                    "parent": n.parent,
                    "note": n.note,
                    "created_by_step": n.created_by_step,
                    "score": n.score,
                }
                for v, n in sorted(self._versions.items())
            }

    def note_score(self, version: int, score: float) -> None:
        with self._lock:
            if version in self._versions:
                self._versions[version].score = score
                self._write_manifest(version)

    def version_sources(self, version: int) -> dict[str, str]:
        with self._lock:
            if version not in self._versions:
                raise UnknownVersionError(f"unknown_version: {version}")
            return dict(self._versions[version].sources)

    # -- internals ----------------------------------------------------------

    def _record_version(self, parent: int | None, note: str, step: int | None) -> None:
        node = _VersionNode(
            version=self._version,
            parent=parent,
            note=note,
            created_by_step=step,
            sources={n: u.source for n, u in self._units.items()},
            roles={n: u.role_tag for n, u in self._units.items()},
        )
        self._versions[self._version] = node
        self._write_snapshot(node)

    def _write_snapshot(self, node: _VersionNode) -> None:
        if self._snapshot_dir is None:
            return
        vdir = self._snapshot_dir / f"v{node.version}"
        vdir.mkdir(parents=True, exist_ok=True)
        for name, source in node.sources.items():
            (vdir / name).write_text(source, encoding="utf-8")
        self._write_manifest(node.version)

    def _write_manifest(self, version: int) -> None:
        if self._snapshot_dir is None:
            return
        node = self._versions[version]
        vdir = self._snapshot_dir / f"v{version}"
        if not vdir.is_dir():
            return
        manifest = {
            "version": node.version,
            "parent": node.parent,
            "created_by_step": node.created_by_step,
            "validation_score": node.score,
        }
        (vdir / "manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
        )
