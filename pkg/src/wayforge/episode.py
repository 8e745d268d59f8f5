"""Episode logs: the timestamped record stream of one simulated episode.

Serialized as JSON Lines: first line the header, one record per line, a
``type`` field discriminating record kinds, and exactly one outcome record
closing the stream. Serialization is canonical (sorted keys, no whitespace)
so identical episodes produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose
from .trajectory import Arm, Gripper
from .world import DomainParams, Outcome


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class EpisodeLog:
    task_id: str
    seed: int
    domain: DomainParams
    session: dict = field(default_factory=dict)  # correction-session metadata, if any
    records: list = field(default_factory=list)  # dicts with a "type" field
    start_time: float = 0.0  # simulation clock epoch; wall time is deliberately excluded

    @property
    def episode_id(self) -> str:
        tag = self.session.get("id", "")
        base = f"{self.task_id}-{self.domain.name}-{self.seed:08d}"
        return f"{base}-{tag}" if tag else base

    # -- record appenders -------------------------------------------------
    def log_arm(self, t, arm: Arm, q, ee: Pose, gripper: Gripper, target) -> None:
        self.records.append(
            {
                "type": "arm",
                "t": round(float(t), 9),
                "arm": arm.value,
                "q": [float(v) for v in q],
                "ee": ee.to_dict(),
                "gripper": gripper.value,
                "target": {
                    "p": [float(v) for v in target.pose.position],
                    "q": [float(v) for v in target.pose.orientation],
                    "gripper": target.gripper.value,
                },
            }
        )

    def log_objects(self, t, objects: dict) -> None:
        self.records.append(
            {
                "type": "objects",
                "t": round(float(t), 9),
                "objects": {
                    oid: {
                        "pose": o.pose.to_dict(),
                        "cls": o.cls.value,
                        "support": o.support,
                        "held_by": o.held_by.value if o.held_by else None,
                    }
                    for oid, o in objects.items()
                },
            }
        )

    def log_command(self, t, arm: Arm, command: str, subtask=None, detail=None) -> None:
        self.records.append(
            {
                "type": "command",
                "t": round(float(t), 9),
                "arm": arm.value,
                "command": command,
                "subtask": subtask.to_dict() if subtask is not None else None,
                "detail": detail or {},
            }
        )

    def log_event(self, t, event) -> None:
        self.records.append(
            {
                "type": "event",
                "t": round(float(t), 9),
                "kind": event.kind,
                "object": event.object_id,
                "detail": event.detail,
            }
        )

    def log_correction(self, t, arm: Arm, raw, applied, mode: str) -> None:
        self.records.append(
            {
                "type": "correction",
                "t": round(float(t), 9),
                "arm": arm.value,
                "raw": [float(v) for v in raw],
                "applied": [float(v) for v in applied],
                "mode": mode,
            }
        )

    def log_outcome(self, t, outcome: Outcome) -> None:
        self.records.append(
            {
                "type": "outcome",
                "t": round(float(t), 9),
                "success": outcome.success,
                "reason": outcome.reason,
            }
        )

    # -- accessors ---------------------------------------------------------
    @property
    def outcome(self) -> Outcome:
        last = self.records[-1]
        if last["type"] != "outcome":
            raise ValueError("episode log does not end with an outcome record")
        return Outcome(last["success"], last["reason"])

    def commands(self, arm: Arm | None = None) -> list:
        out = [r for r in self.records if r["type"] == "command"]
        if arm is not None:
            out = [r for r in out if r["arm"] == arm.value]
        return out

    def arm_states(self, arm: Arm) -> list:
        return [r for r in self.records if r["type"] == "arm" and r["arm"] == arm.value]

    def validate(self) -> None:
        outcomes = [r for r in self.records if r["type"] == "outcome"]
        if len(outcomes) != 1 or self.records[-1]["type"] != "outcome":
            raise ValueError("episode log must contain exactly one outcome record, last")
        ts = [r["t"] for r in self.records]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("record timestamps must be non-decreasing")

    # -- serialization -----------------------------------------------------
    def header_dict(self) -> dict:
        return {
            "type": "header",
            "task": self.task_id,
            "seed": int(self.seed),
            "domain": self.domain.to_dict(),
            "session": self.session,
            "t0": self.start_time,
        }

    def to_jsonl(self) -> str:
        lines = [_canon(self.header_dict())]
        lines.extend(_canon(r) for r in self.records)
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl())
        return path

    @staticmethod
    def from_jsonl(text: str) -> "EpisodeLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise ValueError("first line must be the header record")
        log = EpisodeLog(
            task_id=header["task"],
            seed=header["seed"],
            domain=DomainParams.from_dict(header["domain"]),
            session=header.get("session", {}),
            start_time=header.get("t0", 0.0),
        )
        log.records = [json.loads(ln) for ln in lines[1:]]
        return log

    @staticmethod
    def read(path: Path) -> "EpisodeLog":
        return EpisodeLog.from_jsonl(Path(path).read_text())
