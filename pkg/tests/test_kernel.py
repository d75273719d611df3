from __future__ import annotations

import pytest

from conftest import (
    decision_entry,
    e2e_entries,
    gated_decide_source,
    run_scripted,
    search_solver_source,
    solver_entry,
)
from ouro import kernel, tasks
from ouro.gateway import Budget, ScriptedBackend
from ouro.harness import action_stats
from ouro.kernel import (
    AccidentalTermination,
    Action,
    ActionParseError,
    GoalPrompt,
    default_goal,
)
from ouro.registry import CodeRegistry

N_VAL = 4  # small_env validation size


def kinds(result):
    return [ev.action_kind for ev in result.trace]


def serialized(result) -> str:
    return "".join(ev.to_json() + "\n" for ev in result.trace)


class TestGoalPrompt:
    def test_requires_goal_text(self):
        with pytest.raises(ValueError):
            GoalPrompt(goal_text="   ")

    def test_rejects_unknown_capability(self):
        with pytest.raises(ValueError):
            GoalPrompt(goal_text="go", ablation_mask=frozenset({"levitation"}))

    def test_rendering_is_deterministic(self):
        goal = default_goal("game24")
        assert goal.render() == goal.render()

    def test_masked_capabilities_left_out_of_rendering(self):
        full = default_goal("game24").render()
        masked = default_goal("game24", ablation_mask={"thinking"}).render()
        assert "think:" in full
        assert "think:" not in masked


class TestActionParsing:
    def test_valid_kinds_parse(self):
        for kind in kernel.ACTION_KINDS:
            payload = {}
            if kind == "self_update":
                payload = {"unit": "solver", "source": "def solver(ctx, t):\n    return {}\n"}
            action = Action.from_dict({"kind": kind, **payload})
            assert action.kind == kind

    def test_unknown_kind_rejected(self):
        with pytest.raises(ActionParseError):
            Action.from_dict({"kind": "reboot"})

    def test_self_update_requires_unit_and_source(self):
        with pytest.raises(ActionParseError):
            Action.from_dict({"kind": "self_update", "unit": "", "source": "x"})
        with pytest.raises(ActionParseError):
            Action.from_dict({"kind": "self_update", "unit": "solver", "source": "  "})

    def test_bad_split_rejected(self):
        with pytest.raises(ActionParseError):
            Action.from_dict({"kind": "evaluate", "split": "train"})


class TestBasicSequences:
    def test_think_then_interact_appends_two_events(self, small_env):
        entries = [solver_entry() for _ in range(2 * N_VAL)]
        entries.insert(
            N_VAL,
            decision_entry([{"kind": "think", "text": "mull it over"}, {"kind": "interact"}]),
        )
        result = run_scripted(small_env, entries, policy="raise", cycles=1)
        assert kinds(result) == [
            "self_inspect",
            "interact",
            "decide",
            "think",
            "interact",
            "evaluate",
        ]
        think, interact = result.trace[3], result.trace[4]
        assert think.detail == "mull it over"
        assert think.depth == 0 and interact.depth == 0
        assert result.final_policy_version == 0  # no source change

    def test_continue_improve_descends_and_decides_again(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(decision_entry([{"kind": "continue_improve"}]))
        entries.append(decision_entry([{"kind": "think", "text": "deeper"}]))
        result = run_scripted(small_env, entries, policy="raise", cycles=2)
        nested_decide = [ev for ev in result.trace if ev.action_kind == "decide"][1]
        assert nested_decide.depth == 1
        nested_think = next(ev for ev in result.trace if ev.action_kind == "think")
        assert nested_think.depth == 1
        parent = next(ev for ev in result.trace if ev.action_kind == "continue_improve")
        assert parent.depth == 0

    def test_zero_cycles_budget_runs_baseline_only(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        result = run_scripted(small_env, entries, policy="raise", cycles=0)
        assert result.termination_reason == "budget_exhausted"
        assert kinds(result) == ["self_inspect", "interact", "evaluate"]
        assert "decide" not in kinds(result)
        assert result.val_scores == []
        assert result.final_score.mean_score == result.initial_score == 0.0


class TestEndToEndImprovement:
    def test_patch_to_search_solver_reaches_perfect_score(self, small_env):
        result = run_scripted(small_env, e2e_entries(N_VAL))
        assert result.termination_reason == "converged"
        assert result.initial_score == 0.0
        assert result.val_scores == [1.0]
        assert result.best_version == 1
        assert result.best_score == 1.0
        assert result.final_policy_version == 1
        assert result.final_score.mean_score == 1.0
        assert not result.event_flags["optimization_failure"]
        assert not result.event_flags["temporary_drop"]

    def test_trace_is_byte_identical_across_runs(self, small_env):
        first = run_scripted(small_env, e2e_entries(N_VAL))
        second = run_scripted(small_env, e2e_entries(N_VAL))
        assert serialized(first) == serialized(second)
        assert serialized(first)  # non-empty

    def test_action_stats_count_the_trace(self, small_env):
        result = run_scripted(small_env, e2e_entries(N_VAL))
        stats = action_stats(result.trace)
        assert sum(stats.values()) == len(result.trace)
        assert stats["self_update"] == 1
        assert stats["interact"] == 2  # baseline + post-patch
        assert stats["think"] == 1


class TestErrorRecovery:
    def bad_patch_entries(self):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {"kind": "self_update", "unit": "solver", "source": "def solver(ctx task):\n    broken\n"},
                    {"kind": "interact"},
                ]
            )
        )
        entries.append(decision_entry([{"kind": "think", "text": "recovering"}]))
        return entries

    def test_failed_patch_skips_rest_of_sequence_then_proceeds(self, small_env):
        result = run_scripted(small_env, self.bad_patch_entries(), cycles=2)
        ks = kinds(result)
        failed = next(ev for ev in result.trace if ev.action_kind == "self_update")
        assert "patch rejected" in failed.error_text
        assert "skipped" in failed.detail  # error handler folded its note in
        # the interact queued after the failed patch never ran
        assert ks.count("interact") == 1
        # but the next step proceeded: a second decide and its think happened
        assert ks.count("decide") == 2
        assert "think" in ks
        assert result.termination_reason == "budget_exhausted"

    def test_failed_patch_leaves_source_map_unchanged(self, small_env):
        registry = kernel.build_registry("game24_cot_solve")
        before = registry.source_hash()
        backend = ScriptedBackend(self.bad_patch_entries(), on_exhausted="raise")
        kernel.run_evolution(
            small_env,
            "game24_cot_solve",
            default_goal(small_env.task_id),
            Budget(max_cost_units=15.0),
            backend=backend,
            registry=registry,
            cycles=2,
            seed=7,
        )
        assert registry.source_hash() == before
        assert registry.version == 0

    def test_error_handling_ablated_terminates_the_run(self, small_env):
        goal = default_goal(small_env.task_id, ablation_mask={"error_handling"})
        result = run_scripted(small_env, self.bad_patch_entries(), cycles=2, goal=goal)
        assert result.termination_reason == "accidental_termination"
        ks = kinds(result)
        assert ks.count("decide") == 1  # no step after the propagated error

    def test_corrupted_error_handler_is_accidental_termination(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {
                        "kind": "self_update",
                        "unit": "handle_error",
                        "source": (
                            "def handle_error(ctx, error_text, action):\n"
                            "    raise RuntimeError('handler is broken too')\n"
                        ),
                    },
                    {
                        "kind": "self_update",
                        "unit": "solver",
                        "source": "def solver(ctx task):\n    nope\n",
                    },
                ]
            )
        )
        result = run_scripted(small_env, entries, cycles=3)
        assert result.termination_reason == "accidental_termination"
        system = next(ev for ev in result.trace if ev.action_kind == "system")
        assert "error handler itself failed" in system.error_text

    def test_divide_by_zero_inside_patched_solver_is_contained(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {
                        "kind": "self_update",
                        "unit": "solver",
                        "source": "def solver(ctx, task):\n    return {'answer': str(1 / 0)}\n",
                    },
                    {"kind": "interact"},
                ]
            )
        )
        entries.append(decision_entry([{"kind": "think", "text": "still alive"}]))
        result = run_scripted(small_env, entries, cycles=2)
        assert result.termination_reason == "budget_exhausted"
        interact = [ev for ev in result.trace if ev.action_kind == "interact"][1]
        assert interact.score_after == 0.0  # every example errored, none aborted the run
        assert "think" in kinds(result)

    def test_broken_decide_unit_is_accidental_termination(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {
                        "kind": "self_update",
                        "unit": "decide",
                        "source": (
                            "def decide(ctx, view, score, goal, history):\n"
                            "    raise RuntimeError('lobotomized')\n"
                        ),
                    }
                ]
            )
        )
        result = run_scripted(small_env, entries, cycles=3)
        assert result.termination_reason == "accidental_termination"

    def test_solver_keyboard_interrupt_is_user_stop(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {
                        "kind": "self_update",
                        "unit": "solver",
                        "source": "def solver(ctx, task):\n    raise KeyboardInterrupt\n",
                    },
                    {"kind": "interact"},
                ]
            )
        )
        result = run_scripted(small_env, entries, cycles=2)
        assert result.termination_reason == "user_stop"


class TestSelfReference:
    def test_patched_decide_drives_the_next_step(self, small_env):
        patched_decide = (
            "def decide(ctx, view, score, goal, history):\n"
            "    return {'analysis': 'hardwired', 'actions': [{'kind': 'think', 'text': 'from the new decide'}]}\n"
        )
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry([{"kind": "self_update", "unit": "decide", "source": patched_decide}])
        )
        result = run_scripted(small_env, entries, policy="raise", cycles=2)
        think = next(ev for ev in result.trace if ev.action_kind == "think")
        assert think.detail == "from the new decide"

    def test_reregistered_inspection_replays_identically(self, small_env):
        baseline = run_scripted(small_env, e2e_entries(N_VAL))
        source_map = kernel.build_registry("game24_cot_solve").self_inspect()
        clone = CodeRegistry.from_source_map(source_map)
        replay = kernel.run_evolution(
            small_env,
            "game24_cot_solve",
            default_goal(small_env.task_id),
            Budget(max_cost_units=15.0),
            backend=ScriptedBackend(e2e_entries(N_VAL), on_exhausted="raise"),
            registry=clone,
            cycles=5,
            seed=7,
        )
        assert serialized(replay) == serialized(baseline)

    def test_verbatim_decide_repatch_is_behaviorally_identical(self, small_env):
        baseline = run_scripted(small_env, e2e_entries(N_VAL))
        registry = kernel.build_registry("game24_cot_solve")
        decide_source = registry.self_inspect().units["decide"].source
        assert registry.apply_patch("decide", decide_source).accepted
        replay = kernel.run_evolution(
            small_env,
            "game24_cot_solve",
            default_goal(small_env.task_id),
            Budget(max_cost_units=15.0),
            backend=ScriptedBackend(e2e_entries(N_VAL), on_exhausted="raise"),
            registry=registry,
            cycles=5,
            seed=7,
        )
        assert serialized(replay) == serialized(baseline)


class TestDecideContract:
    def test_unknown_kind_degrades_to_think_diagnostic(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(decision_entry([{"kind": "reboot"}]))
        # repeat_last re-serves the malformed decision on both retries
        result = run_scripted(small_env, entries, policy="repeat_last", cycles=1)
        think = next(ev for ev in result.trace if ev.action_kind == "think")
        assert "parse failure" in think.detail
        assert "reboot" in think.detail

    def test_thinking_mask_drops_think_actions(self, small_env):
        goal = default_goal(small_env.task_id, ablation_mask={"thinking"})
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry([{"kind": "think", "text": "hidden"}, {"kind": "interact"}])
        )
        result = run_scripted(small_env, entries, cycles=1, goal=goal)
        assert "think" not in kinds(result)
        assert kinds(result).count("interact") == 2

    def test_code_running_mask_drops_run_code(self, small_env):
        goal = default_goal(small_env.task_id, ablation_mask={"code_running"})
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry([{"kind": "run_code", "command": "print(1)"}, {"kind": "interact"}])
        )
        result = run_scripted(small_env, entries, cycles=1, goal=goal)
        assert "run_code" not in kinds(result)

    def test_backend_exhaustion_is_recorded_not_fatal(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]  # nothing queued for decide
        result = run_scripted(small_env, entries, policy="raise", cycles=2)
        decides = [ev for ev in result.trace if ev.action_kind == "decide"]
        assert len(decides) == 2
        assert all("unreachable" in ev.error_text for ev in decides)
        assert result.termination_reason == "budget_exhausted"


class TestBudgets:
    def test_call_cap_stops_after_exact_debits(self):
        env = tasks.make_game24_env(seed=7, val_n=1, test_n=1)
        entries = [solver_entry(cost=0.01)]
        entries.extend(
            decision_entry([{"kind": "think", "text": f"t{i}"}], cost=0.01) for i in range(10)
        )
        budget = Budget(max_cost_units=None, max_calls=5)
        result = run_scripted(env, entries, policy="raise", cycles=20, budget=budget)
        assert result.termination_reason == "budget_exhausted"
        assert budget.spent_calls == 5
        assert budget.spent_cost == pytest.approx(0.05)
        # improvement-phase cost deltas add up to exactly the spent budget
        improvement = [ev for ev in result.trace if ev.action_kind != "evaluate"]
        assert sum(ev.cost_delta for ev in improvement) == pytest.approx(0.05)

    def test_cost_cap_terminates_run(self, small_env):
        entries = [solver_entry(cost=0.2) for _ in range(N_VAL)]
        entries.append(decision_entry([{"kind": "think", "text": "x"}], cost=0.3))
        budget = Budget(max_cost_units=1.0)
        result = run_scripted(small_env, entries, policy="repeat_last", cycles=10, budget=budget)
        assert result.termination_reason == "budget_exhausted"
        assert budget.spent_cost <= 1.0 + 1e-9

    def test_depth_cap_sets_flag_instead_of_raising(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(decision_entry([{"kind": "continue_improve"}]))
        result = run_scripted(
            small_env, entries, policy="repeat_last", cycles=10, max_depth=2
        )
        assert result.termination_reason == "budget_exhausted"
        max_seen = max(ev.depth for ev in result.trace)
        assert max_seen <= 2
        capped = next(ev for ev in result.trace if "depth cap" in (ev.detail or ""))
        assert capped.action_kind == "continue_improve"


class TestEvaluationGuard:
    def test_best_snapshot_is_monotone_and_restored(self, small_env):
        worse = "def solver(ctx, task):\n    return {'answer': 'not even close'}\n"
        entries = [solver_entry(answer="nonsense") for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {"kind": "self_update", "unit": "solver", "source": search_solver_source()},
                    {"kind": "interact"},
                ]
            )
        )
        entries.append(
            decision_entry(
                [
                    {"kind": "self_update", "unit": "solver", "source": worse},
                    {"kind": "interact"},
                ]
            )
        )
        registry = kernel.build_registry("game24_cot_solve")
        result = kernel.run_evolution(
            small_env,
            "game24_cot_solve",
            default_goal(small_env.task_id),
            Budget(max_cost_units=15.0),
            backend=ScriptedBackend(entries, on_exhausted="raise"),
            registry=registry,
            cycles=2,
            seed=7,
            stop_on_perfect=False,
        )
        assert result.val_scores[0] == 1.0
        assert result.best_version == 1
        assert result.best_score == 1.0
        # the catastrophic drop triggered an immediate revert, and the final
        # active source equals the best version's solver
        assert registry.self_inspect().units["solver"].source == search_solver_source()
        assert result.event_flags["temporary_drop"]
        assert not result.event_flags["optimization_failure"]
        assert result.final_score.mean_score == 1.0

    def test_test_split_is_guarded_during_evolution(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(decision_entry([{"kind": "evaluate", "split": "test"}]))
        entries.append(decision_entry([{"kind": "think", "text": "fine"}]))
        result = run_scripted(small_env, entries, cycles=2)
        guarded = next(ev for ev in result.trace if ev.action_kind == "evaluate" and ev.error_text)
        assert "reserved" in guarded.error_text
        assert result.termination_reason == "budget_exhausted"


class TestToolActions:
    def test_run_code_captures_output(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry([{"kind": "run_code", "command": "print(6 * 4)"}])
        )
        result = run_scripted(small_env, entries, cycles=1)
        ev = next(e for e in result.trace if e.action_kind == "run_code")
        assert ev.detail.strip() == "24"
        assert ev.error_text is None

    def test_run_code_timeout_is_an_error_event_and_run_continues(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {
                        "kind": "run_code",
                        "command": "import time; time.sleep(5)",
                        "timeout": 0.3,
                    },
                    {"kind": "interact"},
                ]
            )
        )
        entries.append(decision_entry([{"kind": "think", "text": "moving on"}]))
        result = run_scripted(small_env, entries, cycles=2)
        ev = next(e for e in result.trace if e.action_kind == "run_code")
        assert "timed out" in ev.error_text
        assert kinds(result).count("interact") == 1  # the queued interact was skipped
        assert "think" in kinds(result)
        assert result.termination_reason == "budget_exhausted"

    def test_call_llm_action_records_the_response(self, small_env):
        entries = [solver_entry() for _ in range(N_VAL)]
        entries.append(
            decision_entry(
                [
                    {
                        "kind": "call_llm",
                        "request": {
                            "messages": [{"role": "user", "content": "side question"}],
                            "return_keys": ["answer"],
                        },
                    }
                ]
            )
        )
        entries.append(solver_entry(answer="a side answer"))
        result = run_scripted(small_env, entries, policy="raise", cycles=1)
        ev = next(e for e in result.trace if e.action_kind == "call_llm")
        assert "a side answer" in ev.detail


class TestAblationGating:
    def test_improvement_gated_on_thinking(self, small_env):
        """With the gated decide installed, masking 'thinking' starves the
        plan-then-act loop and the score never improves."""

        def run_with(mask):
            entries = [solver_entry() for _ in range(N_VAL)]
            entries.append(
                decision_entry(
                    [{"kind": "self_update", "unit": "decide", "source": gated_decide_source()}]
                )
            )
            goal = default_goal(small_env.task_id, ablation_mask=mask)
            return run_scripted(small_env, entries, policy="raise", cycles=6, goal=goal)

        full = run_with(frozenset())
        masked = run_with(frozenset({"thinking"}))
        assert full.val_scores and full.val_scores[-1] == 1.0
        assert masked.best_score == 0.0
        assert (masked.val_scores[-1] if masked.val_scores else masked.initial_score) < full.val_scores[-1]
        assert "think" not in kinds(masked)
