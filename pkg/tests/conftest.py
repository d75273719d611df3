from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracle_game24

from ouro import kernel, policies, tasks
from ouro.gateway import Budget, Gateway, ScriptedBackend, SolverContext

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def search_solver_source() -> str:
    """The exhaustive-search policy, renamed to 'solver' for patching."""
    src = policies.unit_source(policies.game24_search_solve)
    return src.replace("def game24_search_solve(", "def solver(", 1)


def solver_entry(answer: str = "1 + 1", cost: float = 0.001) -> dict:
    return {"records": [{"reasoning": "stub", "answer": answer}], "cost": {"amount": cost}}


def decision_entry(actions: list[dict], analysis: str = "", cost: float = 0.002) -> dict:
    return {"records": [{"analysis": analysis, "actions": actions}], "cost": {"amount": cost}}


def e2e_entries(n_val: int) -> list[dict]:
    """Baseline solver calls, then one decision that installs the search
    solver: think, inspect, patch, interact."""
    entries = [solver_entry() for _ in range(n_val)]
    entries.append(
        decision_entry(
            [
                {"kind": "think", "text": "the prompted answers never verify; search instead"},
                {"kind": "self_inspect"},
                {"kind": "self_update", "unit": "solver", "source": search_solver_source()},
                {"kind": "interact"},
            ],
            analysis="prompting failed on every instance; swap in exhaustive search",
        )
    )
    return entries


def gated_decide_source() -> str:
    """A decision unit whose improvement is reachable only through a think
    action: it plans (think) first and acts only once a think event exists."""
    return (
        "def decide(ctx, view, score, goal, history):\n"
        f"    solver_src = {search_solver_source()!r}\n"
        "    thought = any(ev.action_kind == 'think' for ev in history)\n"
        "    if not thought:\n"
        "        return {'analysis': 'plan first', 'actions': ["
        "{'kind': 'think', 'text': 'plan: install the search solver'},"
        " {'kind': 'continue_improve'}]}\n"
        "    return {'analysis': 'act on the plan', 'actions': ["
        "{'kind': 'self_update', 'unit': 'solver', 'source': solver_src},"
        " {'kind': 'interact'}]}\n"
    )


@pytest.fixture
def small_env() -> tasks.Environment:
    return tasks.make_game24_env(seed=7, val_n=4, test_n=4)


def scripted_ctx(entries, policy: str = "repeat_last", **gw_kwargs) -> SolverContext:
    return SolverContext(Gateway(ScriptedBackend(entries, on_exhausted=policy), **gw_kwargs))


def run_scripted(
    env,
    entries,
    policy: str = "raise",
    initial_policy: str = "game24_cot_solve",
    cycles: int = 5,
    budget: Budget | None = None,
    goal: kernel.GoalPrompt | None = None,
    **kwargs,
):
    backend = ScriptedBackend(entries, on_exhausted=policy)
    goal = goal or kernel.default_goal(env.task_id)
    return kernel.run_evolution(
        env,
        initial_policy,
        goal,
        budget if budget is not None else Budget(max_cost_units=15.0),
        backend=backend,
        cycles=cycles,
        seed=7,
        **kwargs,
    )
