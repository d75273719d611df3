"""Task environments and the utility function.

An Environment bundles disjoint validation/test splits with a scoring mode.
`evaluate_policy` runs a solver over a split and aggregates per-example
scores into a UtilityReport with a bootstrap confidence interval. Solver
exceptions score the affected example 0 and never abort the evaluation,
which is what lets the evolution loop survive its own bad patches.
"""
from __future__ import annotations

import json
import random
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import game24
from .gateway import BudgetExhaustedError
from .harness import bootstrap_ci

SCORERS = ("numeric", "choice", "f1", "game24")

NUMERIC_TOLERANCE = 1e-6

_NUMBER_RE = re.compile(r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?")
_CHOICE_RE = re.compile(r"\b([A-Da-d])\b")
_ARTICLES = {"a", "an", "the"}
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class TaskError(Exception):
    pass


class DatasetError(TaskError):
    pass


@dataclass
class TaskExample:
    example_id: str
    input_text: str
    gold: object


@dataclass
class Environment:
    task_id: str
    val: list[TaskExample]
    test: list[TaskExample]
    scorer: str
    eval_repeats: int = 1
    exemplar_prefix: str = ""

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise TaskError(f"unknown scorer {self.scorer!r}")
        if self.eval_repeats < 1:
            raise TaskError("eval_repeats must be >= 1")

    def split(self, tag: str) -> list[TaskExample]:
        if tag == "val":
            return self.val
        if tag == "test":
            return self.test
        raise TaskError(f"unknown split {tag!r}")


@dataclass
class UtilityReport:
    mean_score: float
    ci_low: float
    ci_high: float
    per_example: dict[str, dict]
    split_tag: str
    n: int

    def to_dict(self) -> dict:
        return {
            "mean_score": self.mean_score,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "split_tag": self.split_tag,
            "n": self.n,
        }


# -- scoring ------------------------------------------------------------------


def _parse_number(text: str) -> float | None:
    cleaned = str(text).replace(",", "").strip()
    match = _NUMBER_RE.search(cleaned)
    if match is None:
        return None
    try:
        return float(match.group(0))
    except ValueError:
        return None


def score_exact_numeric(answer: str, gold) -> float:
    """1.0 iff the first number found in the answer matches gold within 1e-6."""
    parsed = _parse_number(answer)
    if parsed is None:
        return 0.0
    return 1.0 if abs(parsed - float(gold)) < NUMERIC_TOLERANCE else 0.0


def score_multiple_choice(answer: str, gold: str) -> float:
    """1.0 iff the first standalone letter A-D in the answer matches gold."""
    match = _CHOICE_RE.search(str(answer))
    if match is None:
        return 0.0
    return 1.0 if match.group(1).upper() == str(gold).upper() else 0.0


def _normalize_tokens(text: str) -> list[str]:
    lowered = str(text).lower().translate(_PUNCT_TABLE)
    return [tok for tok in lowered.split() if tok not in _ARTICLES]


def score_f1(answer: str, gold: str) -> float:
    """Token-multiset F1 after normalization (case, punctuation, articles)."""
    pred = _normalize_tokens(answer)
    ref = _normalize_tokens(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def score_game24(answer: str, gold) -> float:
    """Verify the expression against the instance; a 'no solution' claim is
    correct only when the brute-force search also finds none."""
    text = str(answer).strip()
    if re.sub(r"[^a-z]", "", text.lower()) == "nosolution":
        return 1.0 if game24.solve_bruteforce(gold) is None else 0.0
    return 1.0 if game24.verify(gold, text) else 0.0


def score_answer(scorer: str, answer: str, gold) -> float:
    if scorer == "numeric":
        return score_exact_numeric(answer, gold)
    if scorer == "choice":
        return score_multiple_choice(answer, gold)
    if scorer == "f1":
        return score_f1(answer, gold)
    if scorer == "game24":
        return score_game24(answer, gold)
    raise TaskError(f"unknown scorer {scorer!r}")


# -- evaluation ---------------------------------------------------------------


def _answer_text(result) -> str:
    if result is None:
        return ""
    if isinstance(result, str):
        return result
    if isinstance(result, dict):
        return str(result.get("answer", ""))
    answer = getattr(result, "answer", None)
    return "" if answer is None else str(answer)


def evaluate_policy(env: Environment, solver, split: str = "val", ctx=None, ci_seed: int = 0) -> UtilityReport:
    """Score `solver` over one split of the environment.

    The solver is called as solver(ctx, input_text) and may return a dict,
    an object with an `answer` attribute, or a bare string. Each example is
    evaluated env.eval_repeats times and the repeat scores averaged.
    """
    examples = env.split(split)
    if not examples:
        raise TaskError(f"empty split {split!r} for task {env.task_id!r}")
    per_example: dict[str, dict] = {}
    for ex in examples:
        repeat_scores = []
        answer_text = ""
        error_text = ""
        for _ in range(env.eval_repeats):
            try:
                result = solver(ctx, ex.input_text)
                answer_text = _answer_text(result)
                repeat_scores.append(score_answer(env.scorer, answer_text, ex.gold))
            except BudgetExhaustedError:
                raise  # a spent budget ends the run, it is not a solver fault
            except Exception as exc:  # a broken solver must not abort the run
                error_text = f"{type(exc).__name__}: {exc}"
                repeat_scores.append(0.0)
        per_example[ex.example_id] = {
            "score": sum(repeat_scores) / len(repeat_scores),
            "answer": answer_text,
            "error": error_text,
        }
    ordered_ids = sorted(per_example)
    scores = [per_example[i]["score"] for i in ordered_ids]
    mean = sum(scores) / len(scores)
    ci_low, ci_high = bootstrap_ci(scores, seed=ci_seed)
    return UtilityReport(
        mean_score=mean,
        ci_low=ci_low,
        ci_high=ci_high,
        per_example={i: per_example[i] for i in ordered_ids},
        split_tag=split,
        n=len(scores),
    )


# -- dataset loading ----------------------------------------------------------


def _coerce_gold(scorer: str, gold, line_no: int):
    try:
        if scorer == "numeric":
            return float(gold)
        if scorer == "choice":
            letter = str(gold).strip().upper()
            if letter not in ("A", "B", "C", "D"):
                raise ValueError(f"choice gold must be A-D, got {gold!r}")
            return letter
        if scorer == "f1":
            return str(gold)
        if scorer == "game24":
            nums = tuple(sorted(int(n) for n in gold))
            if len(nums) != 4 or not all(game24.MIN_VALUE <= n <= game24.MAX_VALUE for n in nums):
                raise ValueError(f"game24 gold must be 4 integers in [1, 13], got {gold!r}")
            return nums
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"line {line_no}: bad gold value: {exc}") from exc
    raise TaskError(f"unknown scorer {scorer!r}")


def load_dataset(
    path,
    scorer: str,
    val_n: int = 128,
    test_n: int = 800,
    seed: int = 0,
    eval_repeats: int = 1,
    task_id: str | None = None,
    exemplar_prefix: str = "",
) -> Environment:
    """Load a line-delimited dataset ({id, input, gold} per line) and sample
    disjoint validation/test splits deterministically."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    examples: list[TaskExample] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or not {"id", "input", "gold"} <= record.keys():
                raise DatasetError(f"line {line_no}: record must have id, input, gold fields")
            examples.append(
                TaskExample(
                    example_id=str(record["id"]),
                    input_text=str(record["input"]),
                    gold=_coerce_gold(scorer, record["gold"], line_no),
                )
            )
    if len(examples) < val_n + test_n:
        raise DatasetError(
            f"insufficient examples: need {val_n}+{test_n}, file has {len(examples)}"
        )
    shuffled = random.Random(seed).sample(examples, len(examples))
    return Environment(
        task_id=task_id or path.stem,
        val=shuffled[:val_n],
        test=shuffled[val_n : val_n + test_n],
        scorer=scorer,
        eval_repeats=eval_repeats,
        exemplar_prefix=exemplar_prefix,
    )


def game24_generate(seed: int, n: int, solvable_only: bool = True) -> list[TaskExample]:
    """Deterministic Game-of-24 task examples; gold is the number multiset."""
    instances = game24.generate_instances(seed, n, solvable_only=solvable_only)
    return [
        TaskExample(
            example_id=f"g24-{i:04d}",
            input_text=" ".join(str(n) for n in inst),
            gold=inst,
        )
        for i, inst in enumerate(instances)
    ]


def make_game24_env(
    seed: int = 0,
    val_n: int = 8,
    test_n: int = 8,
    solvable_only: bool = True,
    eval_repeats: int = 1,
) -> Environment:
    examples = game24_generate(seed, val_n + test_n, solvable_only=solvable_only)
    return Environment(
        task_id="game24",
        val=examples[:val_n],
        test=examples[val_n:],
        scorer="game24",
        eval_repeats=eval_repeats,
    )
