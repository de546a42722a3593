import json

import pytest
from hypothesis import given, strategies as st

from critsel.errors import (
    DuplicateIdError,
    FileFormatError,
    MalformedRecordError,
    MalformedStepError,
)
from critsel.io import (
    ChatRecord,
    chat_to_trajectory,
    load_dataset,
    load_logprobs,
    parse_react_message,
    render_react_message,
    trajectory_to_chat,
    write_dataset,
    write_logprobs,
)
from critsel.trajectory import Dataset, Step, Trajectory

from conftest import make_trajectory


class TestParseReactMessage:
    def test_canonical_two_label_form(self):
        thought, action = parse_react_message(
            "Thought:\nI should go north.\nAction:\nmove up"
        )
        assert (thought, action) == ("I should go north.", "move up")

    def test_action_only(self):
        assert parse_react_message("Action:\nsearch[red shoes]") == (
            "",
            "search[red shoes]",
        )

    def test_bare_content_is_action(self):
        assert parse_react_message("click[buy now]") == ("", "click[buy now]")

    def test_single_space_after_colon(self):
        assert parse_react_message("Thought: plan\nAction: go") == ("plan", "go")

    def test_case_insensitive_labels(self):
        assert parse_react_message("THOUGHT:\nx\nACTION:\ny") == ("x", "y")

    def test_empty_action_raises(self):
        with pytest.raises(MalformedStepError):
            parse_react_message("Thought:\nonly a thought\nAction:\n")

    def test_unlabeled_head_treated_as_thought(self):
        assert parse_react_message("just musing\nAction:\ngo") == (
            "just musing",
            "go",
        )

    @given(
        thought=st.text(
            alphabet=st.characters(blacklist_categories=("Cs", "Cc")), max_size=40
        ),
        action=st.text(
            alphabet=st.characters(blacklist_categories=("Cs", "Cc")),
            min_size=1,
            max_size=40,
        ),
    )
    def test_render_parse_round_trip(self, thought, action):
        import re

        thought = thought.strip()
        action = action.strip()
        label = re.compile(r"(?im)^[ \t]*(thought|action)[ \t]*:")
        if not action or label.search(thought) or label.search(action):
            return
        assert parse_react_message(render_react_message(thought, action)) == (
            thought,
            action,
        )


class TestChatToTrajectory:
    def test_two_step_record(self):
        record = ChatRecord(
            id="r1",
            environment="toy",
            conversations=[
                ("human", "instruction"),
                ("assistant", "Thought:\nt0\nAction:\na0"),
                ("human", "o0"),
                ("assistant", "Action:\na1"),
                ("human", "o1"),
            ],
            reward=1.0,
        )
        t = chat_to_trajectory(record)
        assert len(t.steps) == 2
        assert t.instruction == "instruction"
        assert t.steps[0] == Step(0, "t0", "a0", "o0")
        assert t.steps[1] == Step(1, "", "a1", "o1")

    def test_trailing_assistant_gives_empty_observation(self):
        record = ChatRecord(
            id="r1",
            environment="toy",
            conversations=[
                ("human", "instruction"),
                ("assistant", "Action:\na0"),
            ],
        )
        t = chat_to_trajectory(record)
        assert t.steps[-1].observation == ""

    def test_consecutive_assistant_messages_rejected(self):
        record = ChatRecord(
            id="r1",
            environment="toy",
            conversations=[
                ("human", "instruction"),
                ("assistant", "Action:\na0"),
                ("assistant", "Action:\na1"),
            ],
        )
        with pytest.raises(MalformedRecordError):
            chat_to_trajectory(record)

    def test_instruction_only_rejected(self):
        record = ChatRecord(
            id="r1", environment="toy", conversations=[("human", "instruction")]
        )
        with pytest.raises(MalformedRecordError):
            chat_to_trajectory(record)


class TestDatasetRoundTrip:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert len(load_dataset(path)) == 0

    def test_three_records(self, tmp_path):
        dataset = Dataset(
            [make_trajectory(3, traj_id=f"t-{i}") for i in range(3)]
        )
        path = tmp_path / "data.jsonl"
        write_dataset(dataset, path)
        assert len(load_dataset(path)) == 3

    def test_duplicate_id_names_line(self, tmp_path):
        record = {
            "id": "dup",
            "environment": "toy",
            "conversations": [
                {"role": "human", "content": "i"},
                {"role": "assistant", "content": "Action:\na"},
            ],
        }
        path = tmp_path / "dup.jsonl"
        path.write_text(json.dumps(record) + "\n" + json.dumps(record) + "\n")
        with pytest.raises(DuplicateIdError, match="line 2"):
            load_dataset(path)

    def test_malformed_line_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"}\nnot json\n')
        with pytest.raises(FileFormatError, match="line 1"):
            load_dataset(path)

    def test_load_write_identity(self, tmp_path):
        dataset = Dataset(
            [
                make_trajectory(3, traj_id="a", final_reward=0.5),
                make_trajectory(1, traj_id="b", final_reward=None),
                Trajectory(
                    id="c",
                    environment="maze",
                    instruction="go",
                    steps=(
                        Step(0, "", "left", "wall"),
                        Step(1, "turn", "right", ""),
                    ),
                    final_reward=1.0,
                ),
            ]
        )
        path = tmp_path / "roundtrip.jsonl"
        write_dataset(dataset, path)
        loaded = load_dataset(path)
        assert loaded.trajectories == dataset.trajectories

    @given(
        shapes=st.lists(
            st.tuples(
                st.integers(min_value=1, max_value=5),
                st.one_of(
                    st.none(), st.floats(min_value=0, max_value=1, width=32)
                ),
            ),
            max_size=5,
        )
    )
    def test_load_write_identity_random(self, tmp_path_factory, shapes):
        tmp = tmp_path_factory.mktemp("rt")
        dataset = Dataset(
            [
                make_trajectory(n, traj_id=f"t-{i}", final_reward=reward)
                for i, (n, reward) in enumerate(shapes)
            ]
        )
        path = tmp / "data.jsonl"
        write_dataset(dataset, path)
        assert load_dataset(path).trajectories == dataset.trajectories


class TestLogprobSidecar:
    def test_round_trip(self, tmp_path):
        from critsel.io import StepLogprobs

        lps = [
            StepLogprobs("a", [[-0.5, -1.0], [-2.0]]),
            StepLogprobs("b", [[0.0]], thought_only=[[-0.25]]),
        ]
        path = tmp_path / "lp.jsonl"
        write_logprobs(lps, path)
        loaded = load_logprobs(path)
        assert loaded["a"].per_step == [[-0.5, -1.0], [-2.0]]
        assert loaded["b"].thought_only == [[-0.25]]
        assert loaded["a"].thought_only is None
