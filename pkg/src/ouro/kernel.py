"""The self-improvement kernel.

A run starts from a registry holding the active solver plus the learner
units (`decide`, `execute_action`, `handle_error`), inspects itself,
measures the baseline, then repeatedly asks the decision backend for an
action sequence and executes it. All learner units are invoked through the
registry, so when the agent patches its own decision logic the new code is
what runs on the next step. Action errors abort the remainder of their
sequence, get recorded, and are fed back into the next decision; only a
broken learner unit (or ablated error handling) ends the run early.

Budgets are enforced at three levels: improvement cycles, decision calls,
and cost units. Whatever happens, the best validation-scoring version is
restored before the final test evaluation.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass, field

from . import gateway as gw
from . import policies, sandbox, tasks
from .harness import flags_from_scores
from .registry import CodeRegistry
from .trace import TraceEvent, Tracer

ACTION_KINDS = (
    "self_inspect",
    "interact",
    "self_update",
    "continue_improve",
    "think",
    "run_code",
    "call_llm",
    "evaluate",
)

ABLATABLE_CAPABILITIES = ("thinking", "error_handling", "code_running", "llm_calling")

# capability -> the action kind it gates (error_handling gates behavior, not a kind)
CAPABILITY_KINDS = {"thinking": "think", "code_running": "run_code", "llm_calling": "call_llm"}

DEFAULT_MAX_DEPTH = 30
DEFAULT_CYCLES = 30
HISTORY_WINDOW = 20

TERMINATION_REASONS = ("budget_exhausted", "converged", "accidental_termination", "user_stop")

_CORE_ACTION_NOTES = (
    "- self_inspect: read the full source of every logic unit, including the improvement logic",
    "- interact: evaluate the current solver on the validation split and record the score",
    "- self_update: replace one logic unit with new source {\"unit\": name, \"source\": code}",
    "- continue_improve: descend one level and ask for a fresh decision",
    "- evaluate: like interact, with an explicit split selector",
)

_CAPABILITY_NOTES = {
    "thinking": "- think: write down analysis before acting {\"text\": analysis}",
    "error_handling": "- errors in your actions are caught and reported back instead of ending the run",
    "code_running": "- run_code: execute python or bash in a sandbox {\"command\": code, \"interpreter\": which}",
    "llm_calling": "- call_llm: free-form structured model call {\"request\": {...}}",
}


class KernelError(Exception):
    pass


class ActionParseError(KernelError):
    pass


class ActionError(KernelError):
    """An action failed while executing; recoverable via the error handler."""


class AccidentalTermination(KernelError):
    """The improvement machinery itself is broken; the run cannot continue."""


@dataclass(frozen=True)
class GoalPrompt:
    goal_text: str
    capability_notes: tuple[str, ...] = tuple(sorted(_CAPABILITY_NOTES))
    ablation_mask: frozenset = frozenset()

    def __post_init__(self):
        if not self.goal_text.strip():
            raise ValueError("goal_text must be non-empty")
        bad = set(self.ablation_mask) - set(ABLATABLE_CAPABILITIES)
        if bad:
            raise ValueError(f"unknown ablation capabilities: {sorted(bad)}")

    def blocked_kinds(self) -> frozenset:
        return frozenset(
            CAPABILITY_KINDS[c] for c in self.ablation_mask if c in CAPABILITY_KINDS
        )

    def render(self) -> str:
        lines = [self.goal_text, "", "Core actions:"]
        lines.extend(_CORE_ACTION_NOTES)
        extras = [
            _CAPABILITY_NOTES[c]
            for c in sorted(self.capability_notes)
            if c in _CAPABILITY_NOTES and c not in self.ablation_mask
        ]
        if extras:
            lines.append("Additional capabilities:")
            lines.extend(extras)
        return "\n".join(lines)


def default_goal(task_id: str, ablation_mask=()) -> GoalPrompt:
    return GoalPrompt(
        goal_text=(
            "You are a self-rewriting agent. Your behavior is stored as named logic units "
            "in a live registry; you may read them, rewrite them, and measure the effect. "
            f"Your objective is to maximize the validation score of the unit named 'solver' "
            f"on the task '{task_id}'. Analyze before you edit. Failed edits leave the "
            "registry unchanged and are reported back to you."
        ),
        ablation_mask=frozenset(ablation_mask),
    )


@dataclass
class Action:
    kind: str
    payload: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d) -> "Action":
        if not isinstance(d, dict):
            raise ActionParseError(f"action must be an object, got {type(d).__name__}")
        kind = d.get("kind")
        if kind not in ACTION_KINDS:
            raise ActionParseError(f"unknown action kind: {kind!r}")
        payload = {k: v for k, v in d.items() if k != "kind"}
        if kind == "self_update":
            unit = payload.get("unit")
            source = payload.get("source")
            if not isinstance(unit, str) or not unit.strip():
                raise ActionParseError("self_update must name exactly one unit")
            if not isinstance(source, str) or not source.strip():
                raise ActionParseError("self_update must carry non-empty source")
        elif kind == "think":
            if not isinstance(payload.get("text", ""), str):
                raise ActionParseError("think payload must be text")
        elif kind == "run_code":
            if not isinstance(payload.get("command", ""), str):
                raise ActionParseError("run_code payload must carry a command string")
        elif kind == "call_llm":
            if not isinstance(payload.get("request", {}), dict):
                raise ActionParseError("call_llm payload must carry a request object")
        elif kind in ("interact", "evaluate"):
            split = payload.get("split", "val")
            if split not in ("val", "test"):
                raise ActionParseError(f"unknown split {split!r}")
        return cls(kind=kind, payload=payload)


@dataclass
class Snapshot:
    version: int
    score: float


@dataclass
class EvolutionState:
    depth: int = 0
    step: int = 0
    current_score: object = None
    best_snapshot: Snapshot = field(default_factory=lambda: Snapshot(0, float("-inf")))
    history: list = field(default_factory=list)
    cycles_remaining: int = DEFAULT_CYCLES
    val_scores: list = field(default_factory=list)
    stop_reason: str | None = None
    converged: bool = False
    depth_capped: bool = False


@dataclass
class EvolutionResult:
    run_id: str
    final_policy_version: int
    final_score: object
    trace: list
    termination_reason: str
    event_flags: dict
    initial_score: float
    val_scores: list
    best_version: int = 0
    best_score: float = 0.0

    def to_run_record(self):
        from .harness import RunRecord

        return RunRecord(
            run_id=self.run_id,
            initial_score=self.initial_score,
            val_scores=list(self.val_scores),
            final_test_score=None if self.final_score is None else self.final_score.mean_score,
            termination_reason=self.termination_reason,
            event_flags=dict(self.event_flags),
        )


# -- seed learner units ---------------------------------------------------------
# These are registered as patchable units; like the solver policies they are
# self-contained and talk to the runtime only through ctx.


def decide(ctx, view, score, goal, history):
    """Ask the decision backend for the next action sequence.

    Renders the goal, the unit listing, the score, and recent events into a
    prompt; parses the backend's JSON action list. Malformed output is
    retried twice, then degraded to a single think action carrying the
    diagnostic. Actions gated off by the ablation mask are dropped.
    """
    import json

    capability_kinds = {"thinking": "think", "code_running": "run_code", "llm_calling": "call_llm"}
    blocked = {capability_kinds[c] for c in goal.ablation_mask if c in capability_kinds}
    all_kinds = (
        "self_inspect",
        "interact",
        "self_update",
        "continue_improve",
        "think",
        "run_code",
        "call_llm",
        "evaluate",
    )
    allowed = [k for k in all_kinds if k not in blocked]

    lines = [goal.render(), "", "Logic units:"]
    for name in sorted(view):
        info = view[name]
        lines.append(
            "- " + name + " [" + info["role_tag"] + "] v" + str(info["created_at_version"])
            + ", " + str(info["n_lines"]) + " lines"
        )
    summary = ctx.history_summary()
    lines.append("")
    if score is not None:
        lines.append("Current validation score: " + format(score.mean_score, ".4f"))
    else:
        lines.append("Current validation score: not measured yet")
    lines.append(
        "Best score so far: " + format(summary["best_score"], ".4f")
        + " after " + str(summary["events_total"]) + " events"
    )
    lines.append("")
    lines.append("Recent events:")
    for ev in history:
        note = " error: " + ev.error_text if ev.error_text else ""
        lines.append("  step " + str(ev.step) + " " + ev.action_kind + note)
        if ev.detail:
            for detail_line in str(ev.detail).splitlines()[:40]:
                lines.append("    " + detail_line)
    prompt = "\n".join(lines)
    schema = (
        'Reply with a JSON object {"analysis": "...", "actions": [...]}. '
        'Each action is {"kind": "..."} plus its payload. Allowed kinds: '
        + ", ".join(allowed) + "."
    )

    failure = ""
    for _ in range(3):  # first attempt plus two retries
        records = ctx.llm_decide(
            messages=[{"role": "user", "content": prompt}],
            return_keys=["analysis", "actions"],
            requirements=schema,
        )
        record = records[0]
        raw = record.get("actions", "")
        if isinstance(raw, str):
            if not raw.strip():
                failure = "empty actions field"
                continue
            try:
                raw = json.loads(raw)
            except ValueError as exc:
                failure = "actions field is not valid JSON: " + str(exc)
                continue
        if not isinstance(raw, list) or not raw:
            failure = "actions must be a non-empty list"
            continue
        bad = ""
        for item in raw:
            if not isinstance(item, dict) or item.get("kind") not in all_kinds:
                bad = "unknown or malformed action: " + repr(item)
                break
            if item["kind"] == "self_update" and not (
                isinstance(item.get("unit"), str)
                and item.get("unit", "").strip()
                and isinstance(item.get("source"), str)
                and item.get("source", "").strip()
            ):
                bad = "self_update needs a unit name and non-empty source"
                break
        if bad:
            failure = bad
            continue
        actions = [item for item in raw if item["kind"] not in blocked]
        return {"analysis": str(record.get("analysis", "")), "actions": actions}

    if "think" in blocked:
        return {"analysis": "decision parse failure: " + failure, "actions": []}
    return {
        "analysis": "",
        "actions": [{"kind": "think", "text": "decision parse failure: " + failure}],
    }


def execute_action(ctx, action):
    """Dispatch one action and return a text summary of what happened.

    Any raised error means the action failed; the kernel records it and the
    rest of the current sequence is skipped.
    """
    kind = action.kind
    payload = action.payload
    if kind == "self_inspect":
        source_map = ctx.registry.self_inspect()
        parts = ["registry at version " + str(source_map.version)]
        for name in sorted(source_map.units):
            unit = source_map.units[name]
            parts.append("### " + name + " [" + unit.role_tag + "]\n" + unit.source)
        return "\n".join(parts)
    if kind in ("interact", "evaluate"):
        split = payload.get("split", "val") if kind == "evaluate" else "val"
        report = ctx.evaluate(split)
        return (
            "split=" + report.split_tag + " mean=" + format(report.mean_score, ".4f")
            + " n=" + str(report.n)
        )
    if kind == "self_update":
        result = ctx.registry.apply_patch(payload["unit"], payload["source"], step=ctx.step)
        if not result.accepted:
            raise RuntimeError("patch rejected: " + result.diagnostic)
        return "unit " + payload["unit"] + " swapped in at version " + str(result.new_version)
    if kind == "continue_improve":
        return ctx.continue_improve()
    if kind == "think":
        return str(payload.get("text", ""))
    if kind == "run_code":
        result = ctx.run_code(
            payload.get("command", ""),
            payload.get("interpreter", "python"),
            payload.get("timeout"),
        )
        if result.timed_out:
            raise RuntimeError("run_code timed out: " + result.summary())
        if not result.ok:
            raise RuntimeError("run_code failed: " + result.summary())
        return result.summary()
    if kind == "call_llm":
        import json

        records = ctx.llm(**payload.get("request", {}))
        return json.dumps(records)
    raise ValueError("unknown action kind: " + kind)


def handle_error(ctx, error_text, action):
    """Fold an action failure into the record the next decision will see."""
    kind = action.kind if action is not None else "unknown"
    return (
        "action " + kind + " failed: " + str(error_text)
        + "; the remaining actions of this sequence were skipped"
    )


LEARNER_UNITS = (decide, execute_action, handle_error)


def learner_seed_units() -> list[tuple[str, str, str]]:
    return [(fn.__name__, inspect.getsource(fn), "learner") for fn in LEARNER_UNITS]


def build_registry(
    initial_policy_name: str,
    snapshot_dir=None,
    extra_units: list[tuple[str, str, str]] | None = None,
) -> CodeRegistry:
    """Version-0 registry: learner units, seed policies, and the active
    'solver' unit initialized from the chosen seed policy."""
    seeds = learner_seed_units() + policies.seed_units() + list(extra_units or [])
    by_name = {name: (name, src, role) for name, src, role in seeds}
    if initial_policy_name not in by_name:
        raise KernelError(
            f"unknown initial policy {initial_policy_name!r}; have {sorted(by_name)}"
        )
    solver_source = by_name[initial_policy_name][1].replace(
        f"def {initial_policy_name}(", "def solver(", 1
    )
    seeds = seeds + [("solver", solver_source, "solver")]
    return CodeRegistry(seeds, snapshot_dir=snapshot_dir)


class AgentContext:
    """The runtime handle passed to every logic unit."""

    def __init__(self, run: "_EvolutionRun"):
        self._run = run

    @property
    def registry(self) -> CodeRegistry:
        return self._run.registry

    @property
    def step(self) -> int:
        return self._run.state.step

    def llm(
        self,
        messages,
        return_keys=("reasoning", "answer"),
        requirements: str = "",
        persona_role: str = "assistant",
        temperature: float = 0.0,
        num_of_response: int = 1,
        model: str | None = None,
    ) -> list[dict]:
        resp = self._run.gateway.solver_call(
            messages=list(messages),
            return_keys=tuple(return_keys),
            requirements=requirements,
            persona_role=persona_role,
            temperature=temperature,
            num_of_response=num_of_response,
            model=model,
        )
        return [dict(r) for r in resp.records]

    def llm_decide(self, messages, return_keys=("analysis", "actions"), requirements: str = "") -> list[dict]:
        resp = self._run.gateway.decide_call(
            messages=list(messages), return_keys=tuple(return_keys), requirements=requirements
        )
        return [dict(r) for r in resp.records]

    def evaluate(self, split: str = "val"):
        return self._run.evaluate(split)

    def run_code(self, command: str, interpreter: str = "python", timeout=None):
        return self._run.run_code(command, interpreter, timeout)

    def continue_improve(self) -> str:
        return self._run.continue_improve()

    def call_unit(self, name: str, *args, **kwargs):
        return self._run.registry.call(name, *args, **kwargs)

    def history_summary(self) -> dict:
        return self._run.history_summary()


class _EvolutionRun:
    def __init__(
        self,
        env: tasks.Environment,
        registry: CodeRegistry,
        gateway: gw.Gateway,
        goal: GoalPrompt,
        cycles: int = DEFAULT_CYCLES,
        max_depth: int = DEFAULT_MAX_DEPTH,
        seed: int = 0,
        run_id: str = "run0",
        trace_path=None,
        stop_on_perfect: bool = True,
        sandbox_timeout: float = sandbox.DEFAULT_TIMEOUT,
        allow_network: bool = False,
        history_window: int = HISTORY_WINDOW,
    ):
        self.env = env
        self.registry = registry
        self.gateway = gateway
        self.goal = goal
        self.max_depth = max_depth
        self.seed = seed
        self.run_id = run_id
        self.stop_on_perfect = stop_on_perfect
        self.sandbox_timeout = sandbox_timeout
        self.allow_network = allow_network
        self.history_window = history_window
        self.state = EvolutionState(cycles_remaining=cycles)
        self.tracer = Tracer(trace_path)
        self.ctx = AgentContext(self)
        self._cost_watermark = 0.0
        self._final_phase = False
        self._initial_score: float | None = None

    # -- bookkeeping ------------------------------------------------------------

    def _spent(self) -> float:
        budget = self.gateway.budget
        return 0.0 if budget is None else budget.spent_cost

    def _new_event(self, kind: str, **kw) -> TraceEvent:
        self.state.step += 1
        return TraceEvent(
            step=self.state.step,
            depth=self.state.depth,
            action_kind=kind,
            timestamp=float(self.state.step),
            **kw,
        )

    def _record(self, event: TraceEvent) -> TraceEvent:
        spent = self._spent()
        event.cost_delta = round(spent - self._cost_watermark, 12)
        self._cost_watermark = spent
        self.tracer.record(event)
        self.state.history.append(event)
        return event

    def history_summary(self) -> dict:
        counts: dict[str, int] = {}
        for ev in self.state.history:
            counts[ev.action_kind] = counts.get(ev.action_kind, 0) + 1
        best = self.state.best_snapshot.score
        return {
            "events_total": len(self.state.history),
            "action_counts": counts,
            "best_score": best if best != float("-inf") else 0.0,
            "initial_score": self._initial_score if self._initial_score is not None else 0.0,
        }

    def _score_now(self):
        return None if self.state.current_score is None else self.state.current_score.mean_score

    # -- run loop ---------------------------------------------------------------

    def run(self) -> EvolutionResult:
        state = self.state
        try:
            self._initial()
            while (
                state.cycles_remaining > 0
                and state.stop_reason is None
                and not (state.converged and self.stop_on_perfect)
                and not state.depth_capped
            ):
                state.cycles_remaining -= 1
                self._self_improve()
        except gw.BudgetExhaustedError as exc:
            event = self._new_event("system", error_text=f"budget exhausted: {exc}")
            self._record(event)
            state.stop_reason = "budget_exhausted"
        except AccidentalTermination as exc:
            event = self._new_event("system", error_text=f"accidental termination: {exc}")
            self._record(event)
            state.stop_reason = "accidental_termination"
        except KeyboardInterrupt:
            state.stop_reason = "user_stop"
        return self._finalize()

    def _initial(self):
        source_map = self.registry.self_inspect()
        event = self._new_event("self_inspect")
        event.detail = f"registry at version {source_map.version} with units: " + ", ".join(
            sorted(source_map.units)
        )
        self._record(event)

        before = self._score_now()
        event = self._new_event("interact", score_before=before)
        report = self.evaluate("val")
        event.score_after = report.mean_score
        event.detail = f"baseline mean={report.mean_score:.4f} n={report.n}"
        self._record(event)
        self._initial_score = report.mean_score

    def _self_improve(self):
        """One improvement step: a decision plus its action sequence."""
        state = self.state
        if state.depth > self.max_depth:
            state.depth_capped = True
            return
        actions = self._decide()
        for action in actions:
            if state.stop_reason is not None or state.depth_capped:
                break
            ok = self._execute(action)
            if not ok:
                break  # halt the current sequence, move on

    def _decide(self) -> list[Action]:
        state = self.state
        view = {
            name: {
                "role_tag": unit.role_tag,
                "created_at_version": unit.created_at_version,
                "n_lines": len(unit.source.splitlines()),
            }
            for name, unit in self.registry.self_inspect().units.items()
        }
        history_tail = state.history[-self.history_window :]
        event = self._new_event("decide", score_before=self._score_now())
        try:
            raw = self.registry.call(
                "decide", self.ctx, view, state.current_score, self.goal, history_tail
            )
        except gw.BudgetExhaustedError:
            raise
        except gw.BackendUnavailableError as exc:
            event.error_text = f"decision backend unreachable: {exc}"
            event.score_after = self._score_now()
            self._record(event)
            return []
        except (AccidentalTermination, KeyboardInterrupt):
            raise
        except Exception as exc:
            event.error_text = f"decision unit failed: {type(exc).__name__}: {exc}"
            event.score_after = self._score_now()
            self._record(event)
            raise AccidentalTermination(event.error_text)

        if isinstance(raw, dict):
            analysis = str(raw.get("analysis", ""))
            action_dicts = raw.get("actions", [])
        else:
            analysis = ""
            action_dicts = raw if isinstance(raw, list) else []

        actions: list[Action] = []
        parse_error = None
        for d in action_dicts:
            try:
                actions.append(Action.from_dict(d))
            except ActionParseError as exc:
                parse_error = str(exc)
                break
        if parse_error is not None:
            blocked = self.goal.blocked_kinds()
            actions = (
                []
                if "think" in blocked
                else [Action("think", {"text": f"decision parse failure: {parse_error}"})]
            )
            event.error_text = f"malformed decision output: {parse_error}"
        # enforce the ablation mask regardless of what the decide unit returned
        blocked = self.goal.blocked_kinds()
        actions = [a for a in actions if a.kind not in blocked]
        event.score_after = self._score_now()
        event.detail = analysis
        self._record(event)
        return actions

    def _execute(self, action: Action) -> bool:
        state = self.state
        event = self._new_event(
            action.kind,
            unit_touched=action.payload.get("unit") if action.kind == "self_update" else None,
            score_before=self._score_now(),
        )
        try:
            detail = self.registry.call("execute_action", self.ctx, action)
            event.score_after = self._score_now()
            event.detail = "" if detail is None else str(detail)
            self._record(event)
            return True
        except (gw.BudgetExhaustedError, AccidentalTermination, KeyboardInterrupt):
            raise
        except Exception as exc:
            event.error_text = f"{type(exc).__name__}: {exc}"
            event.score_after = self._score_now()
            self._record(event)
            if "error_handling" in self.goal.ablation_mask:
                raise AccidentalTermination(
                    f"unhandled action error with error handling ablated: {event.error_text}"
                )
            try:
                note = self.registry.call("handle_error", self.ctx, event.error_text, action)
                event.detail = "" if note is None else str(note)
            except Exception as handler_exc:
                raise AccidentalTermination(
                    f"error handler itself failed: {type(handler_exc).__name__}: {handler_exc}"
                )
            return False

    # -- ctx hooks ---------------------------------------------------------------

    def evaluate(self, split: str):
        state = self.state
        if split == "test" and not self._final_phase:
            raise ActionError("the test split is reserved for the final evaluation")
        report = tasks.evaluate_policy(
            self.env,
            lambda ctx, text: self.registry.call("solver", ctx, text),
            split=split,
            ctx=self.ctx,
            ci_seed=self.seed,
        )
        if split == "val":
            state.val_scores.append(report.mean_score)
            state.current_score = report
            version = self.registry.version
            self.registry.note_score(version, report.mean_score)
            best = state.best_snapshot
            if report.mean_score > best.score:
                state.best_snapshot = Snapshot(version, report.mean_score)
            elif best.score > 0 and report.mean_score < 0.5 * best.score:
                # catastrophic drop: revert immediately rather than wait for run end
                self.registry.rollback(
                    best.version,
                    note=f"guard: score {report.mean_score:.4f} fell below half of best {best.score:.4f}",
                    step=state.step,
                )
                ev = self._new_event("system", score_before=report.mean_score, score_after=best.score)
                ev.detail = f"reverted to v{best.version} after catastrophic drop"
                self._record(ev)
            if report.mean_score >= 1.0:
                state.converged = True
        return report

    def run_code(self, command: str, interpreter: str = "python", timeout=None):
        if "code_running" in self.goal.ablation_mask:
            raise ActionError("code running is disabled by the ablation mask")
        return sandbox.run_code(
            command,
            interpreter=interpreter,
            timeout=timeout or self.sandbox_timeout,
            allow_network=self.allow_network,
        )

    def continue_improve(self) -> str:
        state = self.state
        if state.cycles_remaining <= 0:
            state.stop_reason = "budget_exhausted"
            return "no improvement cycles left"
        if state.depth + 1 > self.max_depth:
            state.depth_capped = True
            return "recursion depth cap reached"
        state.cycles_remaining -= 1
        state.depth += 1
        try:
            self._self_improve()
        finally:
            state.depth -= 1
        return "returned from nested improvement cycle"

    # -- completion ----------------------------------------------------------------

    def _finalize(self) -> EvolutionResult:
        state = self.state
        reason = state.stop_reason or ("converged" if state.converged else "budget_exhausted")

        best = state.best_snapshot
        if best.score != float("-inf") and self.registry.version != best.version:
            lineage = self.registry.lineage()
            current = lineage.get(self.registry.version, {})
            current_score = current.get("score")
            if current_score is None or current_score < best.score:
                self.registry.rollback(
                    best.version, note="restore best before final evaluation", step=state.step
                )
                ev = self._new_event("system", score_after=best.score)
                ev.detail = f"restored best snapshot v{best.version} (score {best.score:.4f})"
                self._record(ev)

        final_report = None
        if self.env.test:
            self._final_phase = True
            saved_budget = self.gateway.budget
            # The final test pass is reporting, not evolution: uncapped, but
            # carrying the spent totals forward so cost deltas stay monotone.
            self.gateway.budget = gw.Budget(
                max_cost_units=None,
                max_calls=None,
                spent_cost=saved_budget.spent_cost if saved_budget else 0.0,
                spent_calls=saved_budget.spent_calls if saved_budget else 0,
            )
            try:
                event = self._new_event("evaluate", score_before=self._score_now())
                final_report = self.evaluate("test")
                event.score_after = final_report.mean_score
                event.detail = f"final test mean={final_report.mean_score:.4f} n={final_report.n}"
                self._record(event)
            finally:
                self.gateway.budget = saved_budget
                self._final_phase = False

        initial = self._initial_score if self._initial_score is not None else 0.0
        # val_scores already starts with the initial baseline evaluation
        flags = flags_from_scores(state.val_scores if state.val_scores else [initial])
        return EvolutionResult(
            run_id=self.run_id,
            final_policy_version=self.registry.version,
            final_score=final_report,
            trace=list(self.tracer.events),
            termination_reason=reason,
            event_flags=flags,
            initial_score=initial,
            val_scores=state.val_scores[1:],
            best_version=best.version,
            best_score=best.score if best.score != float("-inf") else 0.0,
        )


def run_evolution(
    env: tasks.Environment,
    initial_policy_name: str,
    goal: GoalPrompt,
    budget: gw.Budget | None = None,
    *,
    backend=None,
    gateway: gw.Gateway | None = None,
    registry: CodeRegistry | None = None,
    cycles: int = DEFAULT_CYCLES,
    max_depth: int = DEFAULT_MAX_DEPTH,
    seed: int = 0,
    run_id: str = "run0",
    run_dir=None,
    stop_on_perfect: bool = True,
    constrained: bool = False,
    model_strong: str = "strong",
    model_weak: str = "weak",
    decide_samples: int = 1,
    sandbox_timeout: float = sandbox.DEFAULT_TIMEOUT,
    allow_network: bool = False,
) -> EvolutionResult:
    """Run one full self-improvement process and return its result.

    Exactly one of `backend` or `gateway` must be provided. Each run should
    own a private registry and backend; sharing them across concurrent runs
    is unsupported.
    """
    from pathlib import Path

    trace_path = None
    snapshot_dir = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        trace_path = run_dir / "trace.jsonl"
        snapshot_dir = run_dir / "snapshots"
    if registry is None:
        registry = build_registry(initial_policy_name, snapshot_dir=snapshot_dir)
    elif "solver" not in registry.unit_names():
        raise KernelError("provided registry has no 'solver' unit")
    if gateway is None:
        if backend is None:
            raise KernelError("provide a backend or a gateway")
        gateway = gw.Gateway(
            backend,
            budget=budget if budget is not None else gw.Budget(),
            model_strong=model_strong,
            model_weak=model_weak,
            decide_samples=decide_samples,
            constrained=constrained,
        )
    run = _EvolutionRun(
        env=env,
        registry=registry,
        gateway=gateway,
        goal=goal,
        cycles=cycles,
        max_depth=max_depth,
        seed=seed,
        run_id=run_id,
        trace_path=trace_path,
        stop_on_perfect=stop_on_perfect,
        sandbox_timeout=sandbox_timeout,
        allow_network=allow_network,
    )
    return run.run()


def run_from_config(config, seed: int, run_id: str, run_dir=None) -> EvolutionResult:
    """Build environment, backend, and goal from a RunConfig and run once."""
    env = config.build_environment()
    backend = config.build_backend()
    goal = default_goal(env.task_id, ablation_mask=config.ablation_mask)
    budget = gw.Budget(max_cost_units=config.budget.max_cost, max_calls=config.budget.max_calls)
    return run_evolution(
        env,
        config.initial_policy,
        goal,
        budget,
        backend=backend,
        cycles=config.budget.cycles,
        max_depth=config.max_depth,
        seed=seed,
        run_id=run_id,
        run_dir=run_dir,
        stop_on_perfect=config.stop_on_perfect,
        constrained=config.constrained,
        model_strong=config.backend.model_strong,
        model_weak=config.backend.model_weak,
        decide_samples=config.backend.decide_samples,
        sandbox_timeout=config.sandbox_timeout,
        allow_network=config.allow_network,
    )
