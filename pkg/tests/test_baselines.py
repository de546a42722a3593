import itertools
import math

import pytest
from hypothesis import given, strategies as st

from critsel.errors import (
    AlignmentError,
    EmptyStepError,
    InvalidLogprobError,
    NoComplementError,
)
from critsel.io import StepLogprobs
from critsel.selectors.baselines import (
    NonCriticalSelector,
    PerplexitySelector,
    RandomSelector,
    full_selection,
    perplexity,
    select_noncritical,
    select_random,
    select_top_perplexity,
)
from critsel.trajectory import selection_cap

from conftest import make_trajectory


class TestPerplexity:
    def test_two_half_probability_tokens(self):
        assert perplexity([math.log(0.5), math.log(0.5)]) == pytest.approx(2.0)

    def test_certain_token(self):
        assert perplexity([0.0]) == 1.0

    def test_mean_of_three(self):
        assert perplexity([-1.0, -2.0, -3.0]) == pytest.approx(math.exp(2.0))

    def test_empty_step(self):
        with pytest.raises(EmptyStepError):
            perplexity([])

    def test_positive_logprob(self):
        with pytest.raises(InvalidLogprobError):
            perplexity([-1.0, 0.5])

    @given(st.floats(min_value=-30.0, max_value=0.0))
    def test_single_logprob_identity(self, lp):
        assert perplexity([lp]) == pytest.approx(math.exp(-lp), rel=1e-12)

    @given(
        st.lists(
            st.floats(min_value=-10.0, max_value=0.0), min_size=1, max_size=12
        ),
        st.randoms(),
    )
    def test_permutation_invariance(self, lps, rnd):
        shuffled = list(lps)
        rnd.shuffle(shuffled)
        assert perplexity(lps) == pytest.approx(perplexity(shuffled), rel=1e-12)


def logprobs_for_ppls(traj_id, ppls):
    """Single-token steps: logprob -ln(ppl) gives the requested perplexities."""
    return StepLogprobs(traj_id, [[-math.log(p)] for p in ppls])


class TestSelectTopPerplexity:
    def test_tie_broken_by_lower_index(self):
        t = make_trajectory(5)
        lp = logprobs_for_ppls(t.id, [5.0, 1.2, 9.1, 9.1, 2.0])
        sel = select_top_perplexity(t, lp, 0.3)
        assert sel.indices == (2,)
        assert sel.strategy == "perplexity"

    def test_full_ratio_selects_everything(self):
        t = make_trajectory(4)
        lp = logprobs_for_ppls(t.id, [1, 2, 3, 4])
        assert select_top_perplexity(t, lp, 1.0).indices == (0, 1, 2, 3)

    def test_top_three_of_ten(self):
        t = make_trajectory(10)
        lp = logprobs_for_ppls(t.id, [3, 2, 1, 4, 5, 6, 7, 8, 9, 10])
        assert select_top_perplexity(t, lp, 0.3).indices == (7, 8, 9)

    def test_alignment_mismatch(self):
        t = make_trajectory(4)
        lp = logprobs_for_ppls(t.id, [1.0, 2.0])
        with pytest.raises(AlignmentError):
            select_top_perplexity(t, lp, 0.3)

    def test_wrong_trajectory_id(self):
        t = make_trajectory(2)
        lp = logprobs_for_ppls("other", [1.0, 2.0])
        with pytest.raises(AlignmentError):
            select_top_perplexity(t, lp, 0.5)

    def test_span_modes(self):
        t = make_trajectory(2)
        lp = StepLogprobs(
            t.id,
            per_step=[[-1.0], [-2.0]],
            action_only=[[-3.0], [-0.1]],
        )
        assert select_top_perplexity(t, lp, 0.5, span="joint").indices == (1,)
        assert select_top_perplexity(t, lp, 0.5, span="action").indices == (0,)
        with pytest.raises(AlignmentError):
            select_top_perplexity(t, lp, 0.5, span="thought")

    @given(
        ppls=st.lists(
            st.floats(min_value=1.0, max_value=50.0), min_size=1, max_size=8
        ),
        ratio=st.sampled_from([0.1, 0.3, 0.5, 0.8, 1.0]),
    )
    def test_agrees_with_exhaustive_subset_ranking(self, ppls, ratio):
        t = make_trajectory(len(ppls))
        lp = logprobs_for_ppls(t.id, ppls)
        got = select_top_perplexity(t, lp, ratio).indices
        cap = selection_cap(ratio, len(ppls))
        best = max(
            itertools.combinations(range(len(ppls)), cap),
            key=lambda subset: (
                sum(ppls[i] for i in subset),
                tuple(-i for i in subset),
            ),
        )
        assert got == tuple(sorted(best))


class TestSelectRandom:
    def test_deterministic_given_seed(self):
        t = make_trajectory(10)
        assert select_random(t, 0.3, 7) == select_random(t, 0.3, 7)

    def test_full_ratio(self):
        t = make_trajectory(6)
        assert select_random(t, 1.0, 3).indices == tuple(range(6))

    def test_selection_size_equals_cap(self):
        t = make_trajectory(10)
        sel = select_random(t, 0.3, 0)
        assert len(sel.indices) == 3
        assert sel.seed == 0

    def test_different_trajectories_draw_independently(self):
        a = select_random(make_trajectory(10, traj_id="a"), 0.3, 7)
        b = select_random(make_trajectory(10, traj_id="b"), 0.3, 7)
        # Not a strict requirement for any single pair, but these seeds differ.
        assert a.indices != b.indices or a.trajectory_id != b.trajectory_id

    def test_uniform_frequency(self):
        # Frequency oracle: every index should appear with rate 0.3 +/- 0.02.
        t = make_trajectory(10)
        counts = [0] * 10
        draws = 10_000
        for seed in range(draws):
            for i in select_random(t, 0.3, seed).indices:
                counts[i] += 1
        for count in counts:
            assert abs(count / draws - 0.3) < 0.02


class TestSelectNonCritical:
    def test_parity_with_critical_count(self):
        t = make_trajectory(10)
        critical = select_random(t, 0.3, 1)
        sel = select_noncritical(t, critical, 2)
        assert len(sel.indices) == 3
        assert not set(sel.indices) & set(critical.indices)
        assert sel.strategy == "noncritical"

    def test_small_complement_forced(self):
        t = make_trajectory(4)
        critical = full_selection(t)
        critical = select_random(t, 0.8, 0)  # cap=3 of 4
        assert len(critical.indices) == 3
        sel = select_noncritical(t, critical, 5)
        assert len(sel.indices) == 1
        assert sel.indices[0] not in critical.indices

    def test_no_complement(self):
        t = make_trajectory(2)
        critical = full_selection(t)
        with pytest.raises(NoComplementError):
            select_noncritical(t, critical, 0)

    def test_disjointness_over_many_seeds(self):
        t = make_trajectory(12)
        critical = select_random(t, 0.4, 3)
        for seed in range(50):
            sel = select_noncritical(t, critical, seed)
            assert not set(sel.indices) & set(critical.indices)


class TestEstimatorWrappers:
    def test_random_selector_transform(self):
        trajectories = [make_trajectory(8, traj_id=f"t{i}") for i in range(3)]
        selector = RandomSelector(ratio=0.25, seed=9)
        selections = selector.fit(trajectories).transform(trajectories)
        assert [s.trajectory_id for s in selections] == ["t0", "t1", "t2"]
        assert all(len(s.indices) == 2 for s in selections)

    def test_get_params_round_trip(self):
        selector = RandomSelector(ratio=0.2, seed=4)
        params = selector.get_params()
        assert params == {"ratio": 0.2, "seed": 4}
        selector.set_params(ratio=0.5)
        assert selector.ratio == 0.5

    def test_perplexity_selector_requires_logprobs(self):
        selector = PerplexitySelector()
        with pytest.raises(AlignmentError):
            selector.select(make_trajectory(3))

    def test_noncritical_selector(self):
        t = make_trajectory(6)
        critical = {t.id: select_random(t, 0.5, 0)}
        sel = NonCriticalSelector(critical=critical, seed=1).select(t)
        assert not set(sel.indices) & set(critical[t.id].indices)
