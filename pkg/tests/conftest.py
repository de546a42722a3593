import pytest

from critsel.trajectory import Step, Trajectory


def make_trajectory(
    n_steps: int = 4,
    traj_id: str = "t-0",
    environment: str = "toy",
    thought: str = "think",
    final_reward: float | None = 1.0,
) -> Trajectory:
    steps = tuple(
        Step(
            index=i,
            thought=f"{thought} {i}",
            action=f"act-{i}",
            observation=f"obs {i}" if i + 1 < n_steps else "",
        )
        for i in range(n_steps)
    )
    return Trajectory(
        id=traj_id,
        environment=environment,
        instruction="do the task",
        steps=steps,
        final_reward=final_reward,
    )


@pytest.fixture
def trajectory4() -> Trajectory:
    return make_trajectory(4)
