"""Game of 24: verifier, brute-force solver, and instance generator.

An instance is a multiset of 4 integers in [1, 13]. A solution is an
arithmetic expression over +, -, *, / that uses each number exactly once
and evaluates to 24. All arithmetic here is exact (fractions), so
intermediates like 8/3 never lose precision; only the final comparison
applies the conventional 1e-6 tolerance.
"""
from __future__ import annotations

import ast
import random
from dataclasses import dataclass, field
from fractions import Fraction

TARGET = 24
TOLERANCE = Fraction(1, 10**6)
MIN_VALUE, MAX_VALUE = 1, 13

_OPS = ("+", "-", "*", "/")


@dataclass
class VerifyResult:
    """Outcome of checking one candidate expression. Falsy when rejected."""

    ok: bool
    reason: str = ""
    value: Fraction | None = None
    leaves: tuple[int, ...] = field(default=())

    def __bool__(self) -> bool:
        return self.ok


def _eval_node(node: ast.expr, leaves: list[int]) -> Fraction:
    if isinstance(node, ast.BinOp):
        left = _eval_node(node.left, leaves)
        right = _eval_node(node.right, leaves)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            return left / right  # ZeroDivisionError handled by caller
        raise _GrammarError(f"operator {type(node.op).__name__} not allowed")
    if isinstance(node, ast.Constant):
        # bool is an int subclass; reject it explicitly
        if isinstance(node.value, int) and not isinstance(node.value, bool):
            leaves.append(node.value)
            return Fraction(node.value)
        raise _GrammarError(f"leaf {node.value!r} is not an integer")
    raise _GrammarError(f"node {type(node).__name__} not allowed")


class _GrammarError(Exception):
    pass


def verify(numbers, expression: str) -> VerifyResult:
    """Check that `expression` solves the instance `numbers`.

    Accepts any expression over binary +, -, *, / with integer leaves
    (parenthesized or relying on standard precedence). Rejections carry a
    reason code: parse_error, grammar, leaf_mismatch, div_zero, off_target.
    """
    want = tuple(sorted(int(n) for n in numbers))
    try:
        tree = ast.parse(expression, mode="eval")
    except (SyntaxError, ValueError, MemoryError, RecursionError):
        return VerifyResult(False, reason="parse_error")

    leaves: list[int] = []
    try:
        value = _eval_node(tree.body, leaves)
    except _GrammarError as exc:
        return VerifyResult(False, reason=f"grammar: {exc}")
    except ZeroDivisionError:
        return VerifyResult(False, reason="div_zero", leaves=tuple(sorted(leaves)))

    got = tuple(sorted(leaves))
    if got != want:
        return VerifyResult(False, reason="leaf_mismatch", value=value, leaves=got)
    if abs(value - TARGET) < TOLERANCE:
        return VerifyResult(True, value=value, leaves=got)
    return VerifyResult(False, reason="off_target", value=value, leaves=got)


def solve_bruteforce(numbers) -> str | None:
    """Search for a solving expression; None when the instance has no solution.

    Repeatedly picks an ordered pair of remaining values, applies an
    operator, and recurses on the reduced list, carrying the expression
    built so far. Commutative operators are tried once per unordered pair.
    """
    nums = [int(n) for n in numbers]
    if len(nums) != 4:
        raise ValueError(f"expected 4 numbers, got {len(nums)}")

    def search(items: list[tuple[Fraction, str]]) -> str | None:
        if len(items) == 1:
            value, expr = items[0]
            if abs(value - TARGET) < TOLERANCE:
                return expr
            return None
        for i in range(len(items)):
            for j in range(len(items)):
                if i == j:
                    continue
                (a, ea), (b, eb) = items[i], items[j]
                rest = [items[k] for k in range(len(items)) if k != i and k != j]
                for op in _OPS:
                    if op == "+":
                        if i > j:
                            continue
                        value = a + b
                    elif op == "*":
                        if i > j:
                            continue
                        value = a * b
                    elif op == "-":
                        value = a - b
                    else:
                        if b == 0:
                            continue
                        value = a / b
                    found = search(rest + [(value, f"({ea} {op} {eb})")])
                    if found is not None:
                        return found
        return None

    return search([(Fraction(n), str(n)) for n in nums])


def all_instances() -> list[tuple[int, ...]]:
    """Every 4-number multiset over [1, 13], sorted; 1820 in total."""
    out = []
    for a in range(MIN_VALUE, MAX_VALUE + 1):
        for b in range(a, MAX_VALUE + 1):
            for c in range(b, MAX_VALUE + 1):
                for d in range(c, MAX_VALUE + 1):
                    out.append((a, b, c, d))
    return out


def generate_instances(seed: int, n: int, solvable_only: bool = True) -> list[tuple[int, ...]]:
    """Deterministically sample `n` instances (sorted tuples).

    With solvable_only, instances are filtered through the brute-force
    solver, so every returned instance is guaranteed solvable.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    out: list[tuple[int, ...]] = []
    while len(out) < n:
        inst = tuple(sorted(rng.randint(MIN_VALUE, MAX_VALUE) for _ in range(4)))
        if solvable_only and solve_bruteforce(inst) is None:
            continue
        out.append(inst)
    return out
