import math

import pytest
from hypothesis import given, strategies as st

from critsel.errors import (
    EmptyTrajectoryError,
    InvalidRatioError,
    OutOfRangeError,
    SelectionMismatchError,
)
from critsel.trajectory import (
    CriticalSelection,
    Step,
    Trajectory,
    apply_selection,
    history_prefix,
    selection_cap,
    validate_trajectory,
)

from conftest import make_trajectory


class TestValidateTrajectory:
    def test_valid_trajectory_empty_report(self):
        assert validate_trajectory(make_trajectory(3)) == []

    def test_index_gap_reported(self):
        t = Trajectory(
            id="t",
            environment="toy",
            instruction="i",
            steps=(Step(0, "", "a", "o"), Step(2, "", "b", "")),
        )
        report = validate_trajectory(t)
        assert "index gap at position 1" in report

    def test_final_reward_out_of_range(self):
        t = make_trajectory(2, final_reward=1.3)
        assert "final_reward out of [0,1]" in validate_trajectory(t)

    def test_empty_action_reported(self):
        t = Trajectory(
            id="t",
            environment="toy",
            instruction="i",
            steps=(Step(0, "", "", "o"),),
        )
        assert any("empty action" in line for line in validate_trajectory(t))


class TestSelectionCap:
    def test_thirty_percent_of_ten(self):
        assert selection_cap(0.3, 10) == 3

    def test_minimum_of_one(self):
        assert selection_cap(0.3, 3) == 1

    def test_full_ratio(self):
        assert selection_cap(1.0, 7) == 7

    @pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
    def test_invalid_ratio(self, ratio):
        with pytest.raises(InvalidRatioError):
            selection_cap(ratio, 5)

    def test_zero_length(self):
        with pytest.raises(EmptyTrajectoryError):
            selection_cap(0.3, 0)

    @given(
        ratio=st.floats(min_value=0.01, max_value=1.0),
        length=st.integers(min_value=1, max_value=500),
    )
    def test_bounds(self, ratio, length):
        cap = selection_cap(ratio, length)
        assert 1 <= cap <= length
        assert cap == max(1, math.floor(ratio * length))

    @given(
        ratio=st.floats(min_value=0.01, max_value=0.99),
        length=st.integers(min_value=1, max_value=200),
    )
    def test_monotone(self, ratio, length):
        assert selection_cap(ratio, length) <= selection_cap(ratio, length + 1)
        assert selection_cap(ratio, length) <= selection_cap(
            min(1.0, ratio + 0.01), length
        )


class TestHistoryPrefix:
    def test_zero_prefix(self):
        assert history_prefix(make_trajectory(5), 0) == []

    def test_two_prefix(self):
        t = make_trajectory(5)
        prefix = history_prefix(t, 2)
        assert prefix == [
            (s.thought, s.action, s.observation) for s in t.steps[:2]
        ]

    def test_out_of_range(self):
        with pytest.raises(OutOfRangeError):
            history_prefix(make_trajectory(5), 6)


def selection_for(t, indices, strategy="random", ratio=0.5, seed=0):
    return CriticalSelection(
        trajectory_id=t.id,
        indices=tuple(indices),
        strategy=strategy,
        ratio=ratio,
        cap=max(1, len(indices)),
        seed=seed,
    )


class TestApplySelection:
    def test_flags_match_indices(self, trajectory4):
        s = selection_for(trajectory4, (1, 3))
        assert apply_selection(trajectory4, s) == [False, True, False, True]

    def test_empty_selection_warns_all_false(self, trajectory4):
        s = selection_for(trajectory4, ())
        with pytest.warns(UserWarning):
            flags = apply_selection(trajectory4, s)
        assert flags == [False] * 4

    def test_out_of_range_index(self, trajectory4):
        s = selection_for(trajectory4, (5,))
        with pytest.raises(SelectionMismatchError):
            apply_selection(trajectory4, s)

    def test_id_mismatch(self, trajectory4):
        s = CriticalSelection(
            trajectory_id="other",
            indices=(0,),
            strategy="random",
            ratio=0.5,
            cap=1,
        )
        with pytest.raises(SelectionMismatchError):
            apply_selection(trajectory4, s)

    @given(st.sets(st.integers(min_value=0, max_value=9), max_size=10))
    def test_flag_count_equals_selection_size(self, indices):
        t = make_trajectory(10)
        s = selection_for(t, sorted(indices))
        if indices:
            flags = apply_selection(t, s)
        else:
            with pytest.warns(UserWarning):
                flags = apply_selection(t, s)
        assert sum(flags) == len(indices)


class TestCriticalSelectionInvariants:
    def test_rejects_descending_indices(self, trajectory4):
        with pytest.raises(SelectionMismatchError):
            CriticalSelection(
                trajectory_id=trajectory4.id,
                indices=(3, 1),
                strategy="random",
                ratio=0.5,
                cap=4,
            )

    def test_rejects_over_cap(self, trajectory4):
        with pytest.raises(SelectionMismatchError):
            CriticalSelection(
                trajectory_id=trajectory4.id,
                indices=(0, 1, 2),
                strategy="random",
                ratio=0.5,
                cap=2,
            )

    def test_rejects_unknown_strategy(self, trajectory4):
        with pytest.raises(SelectionMismatchError):
            CriticalSelection(
                trajectory_id=trajectory4.id,
                indices=(0,),
                strategy="magic",
                ratio=0.5,
                cap=1,
            )

    def test_rejects_category_outside_indices(self, trajectory4):
        from critsel.trajectory import StepCategory

        with pytest.raises(SelectionMismatchError):
            CriticalSelection(
                trajectory_id=trajectory4.id,
                indices=(0,),
                strategy="llm",
                ratio=0.5,
                cap=1,
                categories={1: StepCategory.PLAN_CREATION},
            )
