from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracle_game24 import enumerate_solution, is_solvable
from ouro import game24

# Derived once from the independent enumerator over all 1820 multisets and
# frozen; the acceptance suite re-derives it from both routes.
SOLVABLE_COUNT = 1362


class TestVerify:
    def test_plain_sum(self):
        assert game24.verify([6, 6, 6, 6], "((6 + 6) + (6 + 6))")

    def test_standard_precedence_accepted(self):
        assert game24.verify([4, 6, 1, 1], "4 * 6 + 1 - 1")

    def test_off_target_reports_value(self):
        result = game24.verify([4, 6, 1, 1], "4 + 6 + 1 + 1")
        assert not result
        assert result.reason == "off_target"
        assert result.value == 12

    def test_leaf_mismatch(self):
        result = game24.verify([4, 6, 1, 1], "4 * 6")
        assert not result
        assert result.reason == "leaf_mismatch"

    def test_each_number_used_exactly_once(self):
        assert not game24.verify([4, 6, 1, 1], "4 * 6 * 1 * 1 * 1")

    def test_division_by_zero(self):
        result = game24.verify([5, 5, 1, 1], "5 / (5 * (1 - 1))")
        assert not result
        assert result.reason == "div_zero"

    def test_malformed_expression(self):
        assert game24.verify([1, 2, 3, 4], "1 + + 2 *").reason == "parse_error"

    def test_disallowed_syntax(self):
        assert not game24.verify([2, 2, 3, 4], "2 ** 2 * 3 + 4 + 8")
        assert not game24.verify([2, 2, 3, 4], "max(2, 2) * 3 * 4")
        assert not game24.verify([2, 2, 3, 4], "-2 + 2 + 3 * 4 + 12")

    def test_fractional_intermediate_value(self):
        assert game24.verify([3, 3, 8, 8], "8 / (3 - 8 / 3)")


class TestSolve:
    def test_all_sixes(self):
        expr = game24.solve_bruteforce([6, 6, 6, 6])
        assert expr is not None
        assert game24.verify([6, 6, 6, 6], expr)

    def test_unsolvable_instance(self):
        # cross-checked by exhaustive enumeration in the acceptance suite
        assert game24.solve_bruteforce([1, 1, 1, 1]) is None
        assert enumerate_solution([1, 1, 1, 1]) is None

    def test_requires_exact_intermediates(self):
        expr = game24.solve_bruteforce([3, 3, 8, 8])
        assert expr is not None
        assert game24.verify([3, 3, 8, 8], expr)

    def test_wrong_arity(self):
        with pytest.raises(ValueError):
            game24.solve_bruteforce([1, 2, 3])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 13), min_size=4, max_size=4))
    def test_agrees_with_enumeration_oracle(self, numbers):
        expr = game24.solve_bruteforce(numbers)
        if expr is None:
            assert not is_solvable(numbers)
        else:
            assert game24.verify(numbers, expr)
            assert is_solvable(numbers)


class TestGenerate:
    def test_deterministic(self):
        a = game24.generate_instances(11, 12)
        b = game24.generate_instances(11, 12)
        assert a == b

    def test_solvable_only_filter(self):
        for inst in game24.generate_instances(3, 10, solvable_only=True):
            assert game24.solve_bruteforce(inst) is not None

    def test_unfiltered_keeps_any_instance(self):
        got = game24.generate_instances(5, 30, solvable_only=False)
        assert len(got) == 30

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            game24.generate_instances(0, 0)

    def test_instance_space_size(self):
        assert len(game24.all_instances()) == 1820
