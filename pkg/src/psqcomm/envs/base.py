"""Common environment interface and the agent-environment trial loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

from ..psagent import PSAgent


@dataclass(frozen=True)
class EnvStep:
    percept: bytes
    reward: float
    done: bool
    available_actions: tuple

    def __post_init__(self):
        if self.reward < 0:
            raise ValueError("reward must be non-negative")
        if not self.done and not self.available_actions:
            raise ValueError("a running episode needs available actions")


class Environment(Protocol):
    num_actions: int

    def reset(self) -> EnvStep: ...

    def step(self, action: int) -> EnvStep: ...

    def action_name(self, action: int) -> str: ...


@dataclass
class TrialRecord:
    actions: list = field(default_factory=list)
    reward: float = 0.0
    success: bool = False
    resources: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_actions(self) -> int:
        return len(self.actions)


def run_trial(agent: PSAgent, env, max_steps: int | None = None) -> TrialRecord:
    """Play one trial; the agent learns after every interaction step."""
    agent.begin_trial()
    step = env.reset()
    rec = TrialRecord()
    n = 0
    while not step.done:
        if max_steps is not None and n >= max_steps:
            break
        action = agent.act(step.percept, step.available_actions)
        step = env.step(action)
        agent.learn(step.reward)
        rec.actions.append(action)
        rec.reward += step.reward
        n += 1
    rec.success = bool(getattr(env, "succeeded", rec.reward > 0))
    rec.resources = getattr(env, "resources", None) if rec.success else None
    return rec
