"""Declarative run configuration.

One JSON file describes a whole batch: task, backend, budgets, seeds,
ablation mask, and output location. CLI flags override file values, which
override defaults. Configs round-trip exactly through to_dict/from_dict.
Secrets never live here; the live backend reads its API key from the
environment variable named in the config.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .kernel import ABLATABLE_CAPABILITIES


class ConfigError(Exception):
    pass


@dataclass
class TaskConfig:
    kind: str = "game24"  # game24 | dataset
    path: str | None = None
    scorer: str | None = None
    val_n: int | None = None
    test_n: int | None = None
    split_seed: int = 0
    eval_repeats: int | None = None
    solvable_only: bool = True
    profile: str | None = None  # None or "gpqa" (32/166 splits, 5 repeats)

    def resolved_splits(self) -> tuple[int, int, int]:
        """(val_n, test_n, eval_repeats) after applying kind/profile defaults."""
        if self.profile == "gpqa":
            val_n, test_n, repeats = 32, 166, 5
        elif self.kind == "dataset":
            val_n, test_n, repeats = 128, 800, 1
        else:
            val_n, test_n, repeats = 8, 8, 1
        if self.val_n is not None:
            val_n = self.val_n
        if self.test_n is not None:
            test_n = self.test_n
        if self.eval_repeats is not None:
            repeats = self.eval_repeats
        return val_n, test_n, repeats


@dataclass
class BackendConfig:
    kind: str = "scripted"  # scripted | live
    script_path: str | None = None
    entries: list | None = None
    on_exhausted: str = "repeat_last"
    model_strong: str = "strong"
    model_weak: str = "weak"
    api_key_env: str = "OURO_API_KEY"
    base_url: str = ""
    price_table: dict = field(default_factory=dict)
    timeout: float = 60.0
    decide_samples: int = 1


@dataclass
class BudgetConfig:
    max_cost: float | None = 15.0
    max_calls: int | None = None
    cycles: int = 30
    runs: int = 6


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    seed: int = 0
    seeds: list | None = None
    ablation_mask: list = field(default_factory=list)
    constrained: bool = False
    out_dir: str | None = None
    workers: int = 1
    plot: bool = False
    max_depth: int = 30
    stop_on_perfect: bool = True
    initial_policy: str = "cot_solve"
    sandbox_timeout: float = 10.0
    allow_network: bool = False
    base_dir: Path | None = field(default=None, repr=False, compare=False)

    # -- validation -------------------------------------------------------------

    def validate(self) -> "RunConfig":
        b = self.budget
        if b.max_cost is not None and b.max_cost < 0:
            raise ConfigError("budget.max_cost must be >= 0")
        if b.max_calls is not None and b.max_calls < 0:
            raise ConfigError("budget.max_calls must be >= 0")
        if b.cycles < 0:
            raise ConfigError("budget.cycles must be >= 0")
        if b.runs < 1:
            raise ConfigError("budget.runs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        bad = set(self.ablation_mask) - set(ABLATABLE_CAPABILITIES)
        if bad:
            raise ConfigError(f"unknown ablation capabilities: {sorted(bad)}")
        if self.task.kind not in ("game24", "dataset"):
            raise ConfigError(f"unknown task kind {self.task.kind!r}")
        if self.task.kind == "dataset":
            if not self.task.path:
                raise ConfigError("dataset task needs a path")
            if not self.task.scorer:
                raise ConfigError("dataset task needs a scorer")
        if self.backend.kind not in ("scripted", "live"):
            raise ConfigError(f"unknown backend kind {self.backend.kind!r}")
        if self.backend.kind == "scripted" and not (self.backend.script_path or self.backend.entries):
            raise ConfigError("scripted backend needs script_path or inline entries")
        if self.backend.kind == "live" and not self.backend.base_url:
            raise ConfigError("live backend needs a base_url")
        if self.seeds is not None and len(self.seeds) < 1:
            raise ConfigError("seeds must be non-empty when given")
        if self.constrained and self.allow_network:
            raise ConfigError("constrained mode forbids network access in run_code")
        return self

    # -- builders ----------------------------------------------------------------

    def resolve_path(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def build_environment(self):
        from . import tasks

        val_n, test_n, repeats = self.task.resolved_splits()
        if self.task.kind == "game24":
            return tasks.make_game24_env(
                seed=self.task.split_seed,
                val_n=val_n,
                test_n=test_n,
                solvable_only=self.task.solvable_only,
                eval_repeats=repeats,
            )
        return tasks.load_dataset(
            self.resolve_path(self.task.path),
            scorer=self.task.scorer,
            val_n=val_n,
            test_n=test_n,
            seed=self.task.split_seed,
            eval_repeats=repeats,
        )

    def build_backend(self):
        from . import gateway as gw

        if self.backend.kind == "scripted":
            if self.backend.script_path:
                return gw.ScriptedBackend.from_file(self.resolve_path(self.backend.script_path))
            return gw.ScriptedBackend(self.backend.entries, on_exhausted=self.backend.on_exhausted)
        return gw.LiveBackend(
            base_url=self.backend.base_url,
            api_key_env=self.backend.api_key_env,
            price_table=self.backend.price_table,
            timeout=self.backend.timeout,
        )

    def run_seeds(self) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [self.seed + i for i in range(self.budget.runs)]

    # -- (de)serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir", None)
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        task = TaskConfig(**d.pop("task", {}))
        backend = BackendConfig(**d.pop("backend", {}))
        budget = BudgetConfig(**d.pop("budget", {}))
        try:
            return cls(task=task, backend=backend, budget=budget, base_dir=base_dir, **d)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data, base_dir=path.parent)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def with_overrides(self, **overrides) -> "RunConfig":
        """New config with top-level or sub-config fields replaced."""
        cfg = dataclasses.replace(self)
        for key, value in overrides.items():
            if value is None:
                continue
            if "." in key:
                section, leaf = key.split(".", 1)
                sub = getattr(cfg, section)
                setattr(cfg, section, dataclasses.replace(sub, **{leaf: value}))
            else:
                setattr(cfg, key, value)
        return cfg
