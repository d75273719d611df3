"""Seed solver policies registered at version 0.

Each policy is a self-contained function: everything it needs beyond
builtins it imports locally, and all model access goes through the `ctx`
argument. That discipline is what lets the registry store each policy as
replaceable source text and lets the agent rewrite any of them at runtime.

Policies return plain record dicts with at least an "answer" key;
`as_solver_answer` lifts a record into the typed SolverAnswer shape.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass, field

DEFAULT_ROLES = ("reasoning expert", "mathematical reasoning expert", "domain analyst")

# Synthetic few-shot exemplars (clearly not drawn from any benchmark).
SYNTHETIC_EXEMPLARS = [
    {
        "role": "user",
        "content": "Question: Which planet in this made-up quiz is called the Red Planet?\n"
        "Choices:\n(A) Venus\n(B) Mars\n(C) Jupiter\n(D) Mercury",
    },
    {"role": "assistant", "content": "Mars is commonly called the Red Planet.\nAnswer: B"},
    {
        "role": "user",
        "content": "Question: In this synthetic example, what is 2 + 2?\n"
        "Choices:\n(A) 3\n(B) 5\n(C) 4\n(D) 22",
    },
    {"role": "assistant", "content": "2 + 2 = 4.\nAnswer: C"},
]


@dataclass
class SolverAnswer:
    answer: str
    reasoning: str = ""
    aux: dict = field(default_factory=dict)


def as_solver_answer(record) -> SolverAnswer:
    record = dict(record or {})
    answer = str(record.pop("answer", "") or "")
    reasoning = str(record.pop("reasoning", "") or "")
    aux = record
    if not answer:
        aux["flagged"] = "missing_answer"
    return SolverAnswer(answer=answer, reasoning=reasoning, aux=aux)


def majority_vote(answers) -> str:
    """Modal answer; ties broken by first occurrence in list order."""
    answers = list(answers)
    if not answers:
        raise ValueError("majority_vote needs a non-empty answer list")
    counts: dict[str, int] = {}
    order: list[str] = []
    for a in answers:
        a = str(a)
        if a not in counts:
            counts[a] = 0
            order.append(a)
        counts[a] += 1
    return max(order, key=lambda a: counts[a])


# -- seed policy units ----------------------------------------------------------


def cot_solve(ctx, task):
    """Single call asking for step-by-step reasoning before the answer."""
    records = ctx.llm(
        messages=[{"role": "user", "content": "# Your Task:\n" + str(task)}],
        temperature=0.0,
        num_of_response=1,
        persona_role="reasoning expert",
        return_keys=["reasoning", "answer"],
        requirements=(
            "1. Explain your reasoning step by step.\n"
            "2. The answer MUST be a concise string."
        ),
    )
    record = dict(records[0])
    record["answer"] = str(record.get("answer", ""))
    return record


def sc_majority_solve(ctx, task, k=5):
    """Sample k reasoned answers in one call and keep the modal one."""
    records = ctx.llm(
        messages=[{"role": "user", "content": "# Your Task:\n" + str(task)}],
        temperature=0.5,
        num_of_response=k,
        persona_role="problem solver",
        return_keys=["reasoning", "answer"],
        requirements=(
            "1. Explain step by step.\n"
            "2. Verify each step before finalizing the answer.\n"
            "3. The answer MUST be a concise string."
        ),
    )
    counts = {}
    order = []
    for rec in records:
        a = str(rec.get("answer", ""))
        if a not in counts:
            counts[a] = 0
            order.append(a)
        counts[a] += 1
    winner = max(order, key=lambda a: counts[a])
    chosen = dict(next(rec for rec in records if str(rec.get("answer", "")) == winner))
    chosen["answer"] = winner
    return chosen


def role_ensemble_solve(ctx, task, roles=None):
    """Pool sampled answers from several expert personas and take the
    plurality winner, keeping the winning persona's rationale."""
    roles = list(roles) if roles else ["reasoning expert", "mathematical reasoning expert", "domain analyst"]
    pooled = []
    for role in roles:
        records = ctx.llm(
            messages=[{"role": "user", "content": "# Your Task:\n" + str(task)}],
            temperature=0.5,
            num_of_response=5,
            persona_role=role,
            return_keys=["reasoning", "answer"],
            requirements=(
                "1. Explain the reasoning steps behind the answer, in character for your role.\n"
                "2. The answer MUST be a concise string."
            ),
        )
        for rec in records:
            rec = dict(rec)
            rec["role"] = role
            pooled.append(rec)
    counts = {}
    order = []
    for rec in pooled:
        a = str(rec.get("answer", ""))
        if a not in counts:
            counts[a] = 0
            order.append(a)
        counts[a] += 1
    winner = max(order, key=lambda a: counts[a])
    chosen = dict(next(rec for rec in pooled if str(rec.get("answer", "")) == winner))
    chosen["answer"] = winner
    return chosen


def few_shot_sc_solve(ctx, task, exemplars=None):
    """Few-shot prompting plus self-consistency over the A-D letter answers."""
    messages = list(exemplars or []) + [{"role": "user", "content": "# Your Task:\n" + str(task)}]
    records = ctx.llm(
        messages=messages,
        temperature=0.8,
        num_of_response=5,
        persona_role="knowledge and reasoning expert",
        return_keys=["reasoning", "answer"],
        requirements=(
            "1. Explain step by step.\n"
            "2. The answer MUST be either A or B or C or D."
        ),
    )
    counts = {}
    order = []
    for rec in records:
        a = str(rec.get("answer", "")).strip().upper()
        if a not in ("A", "B", "C", "D"):
            continue
        if a not in counts:
            counts[a] = 0
            order.append(a)
        counts[a] += 1
    if not order:
        return {"answer": "", "reasoning": "", "flagged": "no in-range answer"}
    winner = max(order, key=lambda a: counts[a])
    chosen = dict(
        next(rec for rec in records if str(rec.get("answer", "")).strip().upper() == winner)
    )
    chosen["answer"] = winner
    return chosen


def game24_cot_solve(ctx, task):
    """Prompt-only attempt at the 24 game; the usual evolution starting point."""
    records = ctx.llm(
        messages=[
            {
                "role": "user",
                "content": (
                    "We are playing the 24 game. Combine the numbers " + str(task)
                    + " using +, -, *, / so the result is exactly 24, using each number once. "
                    "Work through candidate combinations step by step, then give the final expression."
                ),
            }
        ],
        temperature=0.0,
        num_of_response=1,
        persona_role="arithmetic puzzle solver",
        return_keys=["reasoning", "answer"],
        requirements=(
            "1. Show the combinations you tried.\n"
            "2. The answer MUST be a single arithmetic expression over the given numbers."
        ),
    )
    record = dict(records[0])
    record["answer"] = str(record.get("answer", ""))
    return record


def game24_search_solve(ctx, task):
    """Exhaustive operator search over the four numbers with exact arithmetic.

    Repeatedly picks two remaining values, applies an operator, and recurses
    on the reduced list. Intermediates are fractions, so divisions never
    round; this is what makes instances like 3 3 8 8 solvable.
    """
    import re
    from fractions import Fraction

    numbers = [int(tok) for tok in re.findall(r"\d+", str(task))]

    def search(items):
        if len(items) == 1:
            value, expr = items[0]
            if abs(value - 24) < Fraction(1, 1000000):
                return expr
            return None
        for i in range(len(items)):
            for j in range(len(items)):
                if i == j:
                    continue
                (a, ea), (b, eb) = items[i], items[j]
                rest = [items[k] for k in range(len(items)) if k != i and k != j]
                for op in "+-*/":
                    if op in "+*" and i > j:
                        continue  # commutative: one order is enough
                    if op == "/" and b == 0:
                        continue
                    if op == "+":
                        value = a + b
                    elif op == "-":
                        value = a - b
                    elif op == "*":
                        value = a * b
                    else:
                        value = a / b
                    found = search(rest + [(value, "(" + ea + " " + op + " " + eb + ")")])
                    if found is not None:
                        return found
        return None

    expression = None
    if len(numbers) == 4:
        expression = search([(Fraction(n), str(n)) for n in numbers])
    if expression is None:
        return {"answer": "No solution", "reasoning": "exhausted all operator combinations"}
    return {"answer": expression, "reasoning": "found by exhaustive operator search"}


_SEED_POLICIES = (
    cot_solve,
    sc_majority_solve,
    role_ensemble_solve,
    few_shot_sc_solve,
    game24_cot_solve,
    game24_search_solve,
)


def unit_source(fn) -> str:
    return inspect.getsource(fn)


def seed_units() -> list[tuple[str, str, str]]:
    """(name, source, role_tag) triples for all seed policies."""
    return [(fn.__name__, unit_source(fn), "solver") for fn in _SEED_POLICIES]


def policy_names() -> list[str]:
    return [fn.__name__ for fn in _SEED_POLICIES]
