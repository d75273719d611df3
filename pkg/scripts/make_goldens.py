#!/usr/bin/env python3
"""Regenerate the committed fixture script, config, and golden files.

Run from the repo root after an intentional behavior change:

    python3 scripts/make_goldens.py

The golden files freeze one deterministic end-to-end evolution: a scripted
backend whose single decision thinks, inspects, patches the solver from the
prompt stub to the exhaustive search, and re-evaluates.
"""
from __future__ import annotations

import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from conftest import e2e_entries  # noqa: E402

from ouro import cli  # noqa: E402
from ouro.trace import render_replay  # noqa: E402

FIXTURES = REPO / "tests" / "fixtures"
GOLDEN = REPO / "tests" / "golden"

N_VAL = 6


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    GOLDEN.mkdir(parents=True, exist_ok=True)

    script = {"policy": "raise", "entries": e2e_entries(N_VAL)}
    (FIXTURES / "script_e2e.json").write_text(
        json.dumps(script, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    config = {
        "task": {"kind": "game24", "val_n": N_VAL, "test_n": N_VAL, "split_seed": 7},
        "backend": {"kind": "scripted", "script_path": "script_e2e.json"},
        "budget": {"max_cost": 15.0, "cycles": 5, "runs": 2},
        "seed": 0,
        "initial_policy": "game24_cot_solve",
    }
    (FIXTURES / "config_e2e.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "out"
        rc = cli.main(["evolve", "--config", str(FIXTURES / "config_e2e.json"), "--out", str(out)])
        if rc != 0:
            raise SystemExit(f"evolve failed with exit code {rc}")
        shutil.copy(out / "run0" / "trace.jsonl", GOLDEN / "trace_e2e.jsonl")
        shutil.copy(out / "results.json", GOLDEN / "results_e2e.json")
        (GOLDEN / "replay_e2e.txt").write_text(
            render_replay(out / "run0" / "trace.jsonl"), encoding="utf-8"
        )

    for name in ("script_e2e.json", "config_e2e.json"):
        print("fixture:", FIXTURES / name)
    for name in ("trace_e2e.jsonl", "results_e2e.json", "replay_e2e.txt"):
        print("golden:", GOLDEN / name)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
