"""Seeded policy evaluation producing canonical, byte-stable reports."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .rollout import execute_rollout
from .tasks import TaskSpec
from .world import DomainParams
from .workspace import config_digest


@dataclass
class EvalReport:
    task_id: str
    domain: str
    seed: int
    episodes: int
    successes: int
    success_rate: float
    failure_reasons: dict = field(default_factory=dict)
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "task": self.task_id,
            "domain": self.domain,
            "seed": self.seed,
            "episodes": self.episodes,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "failure_reasons": dict(sorted(self.failure_reasons.items())),
            "config_digest": self.config_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        return EvalReport(
            task_id=d["task"], domain=d["domain"], seed=d["seed"], episodes=d["episodes"],
            successes=d["successes"], success_rate=d["success_rate"],
            failure_reasons=d.get("failure_reasons", {}), config_digest=d.get("config_digest", ""),
        )


def episode_seed(base_seed: int, index: int) -> int:
    return int(
        np.random.SeedSequence([base_seed & (2**63 - 1), 1009, index]).generate_state(1)[0]
        % (2**31)
    )


def evaluate_policy(
    task: TaskSpec,
    low_level,
    n: int,
    domain: DomainParams,
    models: dict,
    seed: int,
    extra_digest=None,
) -> EvalReport:
    """Run n seeded rollouts and tally the task success rate."""
    successes = 0
    reasons: Counter = Counter()
    for i in range(n):
        res = execute_rollout(task, low_level, episode_seed(seed, i), domain, models)
        if res.outcome.success:
            successes += 1
        else:
            # collapse object ids so the histogram groups failure modes
            reason = res.outcome.reason or "unknown"
            reasons[_normalize_reason(reason)] += 1
    digest = config_digest(
        {"task": task.to_dict(), "domain": domain.to_dict(), "n": n, "seed": seed,
         "extra": extra_digest}
    )
    return EvalReport(
        task_id=task.id,
        domain=domain.name,
        seed=seed,
        episodes=n,
        successes=successes,
        success_rate=successes / n if n else 0.0,
        failure_reasons=dict(reasons),
        config_digest=digest,
    )


def _normalize_reason(reason: str) -> str:
    if reason.startswith("grasp missed"):
        return "grasp_missed"
    if reason.startswith("ik failure"):
        return "ik_failure"
    if "outside" in reason:
        return "object_outside_target"
    if "not resting" in reason or "offset" in reason:
        return "placement_unstable"
    if "strike" in reason:
        return "strike_missed"
    if "cm from" in reason:
        return "placement_off_marker"
    return reason
