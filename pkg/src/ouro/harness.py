"""Run statistics and reporting: bootstrap CIs, action counts, robustness
event rates, progression curves, batch/ablation orchestration."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


def bootstrap_ci(
    per_example_scores,
    level: float = 0.95,
    resamples: int = 10_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap CI of the mean, on a 0-100 percent scale.

    Deterministic for a fixed seed. Degenerate inputs (all scores equal)
    give exact degenerate bounds.
    """
    scores = np.asarray(list(per_example_scores), dtype=float)
    if scores.size == 0:
        raise ValueError("cannot bootstrap an empty score list")
    if resamples < 1000:
        raise ValueError("resamples must be >= 1000")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, scores.size, size=(resamples, scores.size))
    means = scores[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return float(low * 100.0), float(high * 100.0)


def action_stats(trace) -> dict[str, int]:
    """Exact per-kind action counts over a trace. Sums to the trace length."""
    counts: dict[str, int] = {}
    for event in trace:
        kind = event["action_kind"] if isinstance(event, dict) else event.action_kind
        counts[kind] = counts.get(kind, 0) + 1
    return counts


def flags_from_scores(score_sequence) -> dict[str, bool]:
    """Robustness event flags from a validation-score sequence.

    The sequence starts with the initial baseline score. A temporary drop is
    any score below its immediate predecessor; an optimization failure means
    the final score is below the initial one. This is the single definition
    used by both the evolution kernel and the reporting side.
    """
    seq = [float(s) for s in score_sequence]
    temporary_drop = any(b < a for a, b in zip(seq, seq[1:]))
    optimization_failure = bool(seq) and seq[-1] < seq[0]
    return {"temporary_drop": temporary_drop, "optimization_failure": optimization_failure}


@dataclass
class RunRecord:
    """Summary of one full evolution run."""

    run_id: str
    initial_score: float
    val_scores: list[float]
    final_test_score: float | None
    termination_reason: str
    event_flags: dict = field(default_factory=dict)

    @property
    def score_sequence(self) -> list[float]:
        return [self.initial_score] + list(self.val_scores)

    def recomputed_flags(self) -> dict[str, bool]:
        flags = flags_from_scores(self.score_sequence)
        flags["accidental_termination"] = self.termination_reason == "accidental_termination"
        return flags

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            run_id=str(d["run_id"]),
            initial_score=float(d["initial_score"]),
            val_scores=[float(s) for s in d["val_scores"]],
            final_test_score=None if d.get("final_test_score") is None else float(d["final_test_score"]),
            termination_reason=str(d["termination_reason"]),
            event_flags=dict(d.get("event_flags", {})),
        )


@dataclass
class RobustnessSummary:
    n_runs: int
    pct_accidental_termination: float
    pct_temporary_drop: float
    pct_optimization_failure: float


def robustness_stats(runs: list[RunRecord]) -> RobustnessSummary:
    """Percentage of runs per unexpected-event category, over all runs."""
    if not runs:
        raise ValueError("need at least one run")
    n = len(runs)
    accidental = sum(1 for r in runs if r.termination_reason == "accidental_termination")
    drops = sum(1 for r in runs if r.event_flags.get("temporary_drop"))
    failures = sum(1 for r in runs if r.event_flags.get("optimization_failure"))
    return RobustnessSummary(
        n_runs=n,
        pct_accidental_termination=100.0 * accidental / n,
        pct_temporary_drop=100.0 * drops / n,
        pct_optimization_failure=100.0 * failures / n,
    )


def progression_curve(run: RunRecord) -> list[tuple[int, float, float]]:
    """Plot-ready rows of (cycle, score, best_so_far). Cycle 0 is the baseline."""
    rows: list[tuple[int, float, float]] = []
    best = float("-inf")
    for i, score in enumerate(run.score_sequence):
        best = max(best, score)
        rows.append((i, score, best))
    return rows


# -- batch orchestration ------------------------------------------------------


@dataclass
class BatchResult:
    records: list[RunRecord]
    results: list  # EvolutionResult per run
    out_dir: Path | None = None


def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def run_batch(config) -> BatchResult:
    """Run config.runs independent evolutions, each with a private registry,
    backend, and trace sink. Writes traces/snapshots/results when an output
    directory is configured."""
    from concurrent.futures import ThreadPoolExecutor

    from . import kernel

    seeds = config.run_seeds()
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def one_run(i_seed):
        i, seed = i_seed
        run_dir = out_dir / f"run{i}" if out_dir is not None else None
        return kernel.run_from_config(config, seed=seed, run_id=f"run{i}", run_dir=run_dir)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one_run, enumerate(seeds)))
    else:
        results = [one_run(pair) for pair in enumerate(seeds)]

    records = [res.to_run_record() for res in results]
    batch = BatchResult(records=records, results=results, out_dir=out_dir)
    if out_dir is not None:
        write_results(out_dir / "results.json", config, records)
        (out_dir / "results.txt").write_text(render_results_text(config, records), encoding="utf-8")
    return batch


def run_ablation(config, masks: list) -> list[dict]:
    """One evolution batch per ablation mask, identical seeds, compared on
    final scores."""
    if not masks:
        raise ValueError("need at least one ablation mask")
    rows = []
    for mask in masks:
        masked = config.with_overrides(ablation_mask=sorted(mask), out_dir=_mask_out_dir(config, mask))
        batch = run_batch(masked)
        finals = [r.final_test_score for r in batch.records]
        val_finals = [r.score_sequence[-1] for r in batch.records]
        rows.append(
            {
                "mask": sorted(mask),
                "seeds": masked.run_seeds(),
                "final_test_scores": finals,
                "final_val_scores": val_finals,
                "mean_final_val": sum(val_finals) / len(val_finals) if val_finals else None,
                "terminations": [r.termination_reason for r in batch.records],
            }
        )
    return rows


def _mask_out_dir(config, mask) -> str | None:
    if not config.out_dir:
        return None
    tag = "none" if not mask else "_".join(sorted(mask))
    return str(Path(config.out_dir) / f"mask_{tag}")


# -- results files ------------------------------------------------------------


def write_results(path, config, records: list[RunRecord]) -> None:
    # out_dir is machine-specific; strip it so results files are portable
    config_dict = config.to_dict() | {"out_dir": None}
    payload = {
        "config_hash": config_hash(config_dict),
        "config": config_dict,
        "runs": [r.to_dict() for r in records],
        "summary": summarize(records),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_results(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def summarize(records: list[RunRecord]) -> dict:
    if not records:
        return {}
    rob = robustness_stats(records)
    finals = [r.final_test_score for r in records if r.final_test_score is not None]
    return {
        "n_runs": rob.n_runs,
        "mean_initial_val": sum(r.initial_score for r in records) / len(records),
        "mean_final_val": sum(r.score_sequence[-1] for r in records) / len(records),
        "mean_final_test": sum(finals) / len(finals) if finals else None,
        "pct_accidental_termination": rob.pct_accidental_termination,
        "pct_temporary_drop": rob.pct_temporary_drop,
        "pct_optimization_failure": rob.pct_optimization_failure,
    }


def render_results_text(config, records: list[RunRecord]) -> str:
    lines = [f"batch of {len(records)} run(s), config {config_hash(config.to_dict())}", ""]
    for r in records:
        seq = " -> ".join(f"{s:.3f}" for s in r.score_sequence)
        final = "n/a" if r.final_test_score is None else f"{r.final_test_score:.3f}"
        lines.append(f"{r.run_id}: val {seq} | test {final} | {r.termination_reason}")
    s = summarize(records)
    lines += [
        "",
        f"mean initial val: {s['mean_initial_val']:.3f}",
        f"mean final val:   {s['mean_final_val']:.3f}",
        f"accidental termination: {s['pct_accidental_termination']:.1f}%",
        f"temporary drop:         {s['pct_temporary_drop']:.1f}%",
        f"optimization failure:   {s['pct_optimization_failure']:.1f}%",
    ]
    return "\n".join(lines) + "\n"


def write_progression_plot(records: list[RunRecord], path) -> None:
    """Optional matplotlib rendering of per-run accuracy progression."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for r in records:
        rows = progression_curve(r)
        ax.plot([c for c, _, _ in rows], [s for _, s, _ in rows], marker="o", label=r.run_id)
    ax.set_xlabel("improvement cycle")
    ax.set_ylabel("validation score")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
