"""Operator entry point.

Commands: evolve (run self-improvement batches), eval (score one policy),
replay (render a trace), ablate (capability ablation batches), report
(re-render a results file). Flag values override config-file values, which
override defaults. Exit codes: 0 success, 1 config/IO error, 2 backend
unavailable.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, kernel, tasks, trace
from .config import ConfigError, RunConfig
from .gateway import BackendUnavailableError, Gateway, SolverContext


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ouro", description="self-rewriting agent runtime")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_common(sp):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--task", default=None, choices=["game24", "dataset"], help="task kind")
        sp.add_argument("--dataset", default=None, help="dataset file for task=dataset")
        sp.add_argument("--scorer", default=None, choices=list(tasks.SCORERS), help="dataset scorer")
        sp.add_argument("--val-n", type=int, default=None, help="validation split size")
        sp.add_argument("--test-n", type=int, default=None, help="test split size")
        sp.add_argument("--backend", default=None, help="scripted:<script.json> or live:<base-url>")
        sp.add_argument("--seed", type=int, default=None, help="base seed")
        sp.add_argument("--runs", type=int, default=None, help="independent runs per batch")
        sp.add_argument("--cycles", type=int, default=None, help="improvement cycles per run")
        sp.add_argument(
            "--mask",
            action="append",
            default=None,
            help="ablation mask; comma-separated capabilities or 'none' (repeatable)",
        )
        sp.add_argument("--constrained", action="store_true", default=None, help="pin the solver model tier")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--workers", type=int, default=None, help="parallel runs")
        sp.add_argument("--plot", action="store_true", default=None, help="write progression plots")

    ev = sub.add_parser("evolve", help="run N independent self-improvement processes")
    add_common(ev)
    ev.add_argument("--policy", default=None, help="initial policy unit name")
    ev.set_defaults(func=cmd_evolve)

    ee = sub.add_parser("eval", help="evaluate one registered policy on a split")
    add_common(ee)
    ee.add_argument("--policy", required=True, help="policy unit name")
    ee.add_argument("--split", default="val", choices=["val", "test"])
    ee.set_defaults(func=cmd_eval)

    rp = sub.add_parser("replay", help="render a trace file step by step")
    rp.add_argument("trace", help="trace.jsonl path")
    rp.set_defaults(func=cmd_replay)

    ab = sub.add_parser("ablate", help="run one batch per ablation mask and compare")
    add_common(ab)
    ab.add_argument("--policy", default=None, help="initial policy unit name")
    ab.set_defaults(func=cmd_ablate)

    rr = sub.add_parser("report", help="re-render a results.json file")
    rr.add_argument("results", help="results.json path")
    rr.add_argument("--plot", action="store_true", help="write a progression plot next to it")
    rr.set_defaults(func=cmd_report)

    return p


def _parse_mask(value: str) -> list[str]:
    if value.strip().lower() in ("none", ""):
        return []
    return [part.strip() for part in value.split(",") if part.strip()]


def _assemble_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides: dict = {}
    if getattr(args, "task", None):
        overrides["task.kind"] = args.task
    if getattr(args, "dataset", None):
        overrides["task.path"] = args.dataset
        overrides["task.kind"] = "dataset"
    if getattr(args, "scorer", None):
        overrides["task.scorer"] = args.scorer
    if getattr(args, "val_n", None) is not None:
        overrides["task.val_n"] = args.val_n
    if getattr(args, "test_n", None) is not None:
        overrides["task.test_n"] = args.test_n
    if getattr(args, "backend", None):
        kind, _, rest = args.backend.partition(":")
        if kind == "scripted":
            overrides["backend.kind"] = "scripted"
            if rest:
                overrides["backend.script_path"] = rest
        elif kind == "live":
            overrides["backend.kind"] = "live"
            if rest:
                overrides["backend.base_url"] = rest
        else:
            raise ConfigError(f"--backend must start with scripted: or live:, got {args.backend!r}")
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["budget.runs"] = args.runs
    if getattr(args, "cycles", None) is not None:
        overrides["budget.cycles"] = args.cycles
    if getattr(args, "mask", None):
        mask: list[str] = []
        for value in args.mask:
            mask.extend(_parse_mask(value))
        overrides["ablation_mask"] = sorted(set(mask))
    if getattr(args, "constrained", None):
        overrides["constrained"] = True
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "plot", None):
        overrides["plot"] = True
    if getattr(args, "policy", None):
        overrides["initial_policy"] = args.policy
    return cfg.with_overrides(**overrides).validate()


def cmd_evolve(args) -> int:
    config = _assemble_config(args)
    batch = harness.run_batch(config)
    sys.stdout.write(harness.render_results_text(config, batch.records))
    if config.plot and config.out_dir:
        harness.write_progression_plot(batch.records, Path(config.out_dir) / "progression.png")
    return 0


def cmd_eval(args) -> int:
    config = _assemble_config(args)
    registry = kernel.build_registry(config.initial_policy)
    if args.policy not in registry.unit_names():
        sys.stderr.write(
            f"unknown policy {args.policy!r}; available units: {', '.join(registry.unit_names())}\n"
        )
        return 1
    env = config.build_environment()
    gateway = Gateway(
        config.build_backend(),
        budget=None,
        model_strong=config.backend.model_strong,
        model_weak=config.backend.model_weak,
        constrained=config.constrained,
    )
    ctx = SolverContext(gateway)
    report = tasks.evaluate_policy(
        env,
        lambda c, t: registry.call(args.policy, c, t),
        split=args.split,
        ctx=ctx,
        ci_seed=config.seed,
    )
    sys.stdout.write(
        f"{args.policy} on {env.task_id}/{args.split}: "
        f"{100 * report.mean_score:.1f} ({report.ci_low:.1f}, {report.ci_high:.1f}) n={report.n}\n"
    )
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = report.to_dict() | {"policy": args.policy, "task": env.task_id}
        (out / f"eval_{args.policy}_{args.split}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_replay(args) -> int:
    sys.stdout.write(trace.render_replay(args.trace))
    return 0


def cmd_ablate(args) -> int:
    config = _assemble_config(args)
    if not args.mask:
        sys.stderr.write("ablate needs at least one --mask (use 'none' for the full config)\n")
        return 1
    masks = [_parse_mask(value) for value in args.mask]
    rows = harness.run_ablation(config, masks)
    header = f"{'mask':<32} {'mean final val':>14}  terminations"
    sys.stdout.write(header + "\n")
    for row in rows:
        name = ",".join(row["mask"]) if row["mask"] else "(none)"
        sys.stdout.write(
            f"{name:<32} {row['mean_final_val']:>14.4f}  {','.join(row['terminations'])}\n"
        )
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(
            json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_report(args) -> int:
    data = harness.load_results(args.results)
    config = RunConfig.from_dict(data["config"])
    records = [harness.RunRecord.from_dict(r) for r in data["runs"]]
    sys.stdout.write(harness.render_results_text(config, records))
    if args.plot:
        harness.write_progression_plot(records, Path(args.results).with_name("progression.png"))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except BackendUnavailableError as exc:
        sys.stderr.write(f"backend unavailable: {exc}\n")
        return 2
    except (tasks.TaskError, trace.TraceError, kernel.KernelError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
