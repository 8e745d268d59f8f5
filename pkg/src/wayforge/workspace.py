"""Workspace layout and artifact persistence.

Every artifact file name carries the seed and a digest of the config that
produced it, and writes refuse to silently replace differing content, so
re-runs either reproduce a file byte-for-byte or fail loudly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .kinematics import default_models, save_models
from .tasks import TaskSpec, builtin_tasks

ENV_ROOT = "WAYFORGE_WORKSPACE"
SUBDIRS = ("tasks", "demos", "datasets", "checkpoints", "episodes", "sessions", "reports")


class ContentMismatch(RuntimeError):
    """Refusing to overwrite an existing artifact with different content."""


def config_digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class Workspace:
    root: Path

    @staticmethod
    def locate(root=None) -> "Workspace":
        root = Path(root or os.environ.get(ENV_ROOT, "./workspace"))
        return Workspace(root=root)

    def init(self) -> "Workspace":
        for d in SUBDIRS:
            (self.root / d).mkdir(parents=True, exist_ok=True)
        for task in builtin_tasks().values():
            path = self.root / "tasks" / f"{task.id}.json"
            if not path.exists():
                task.save(path)
        arms = self.root / "tasks" / "arm_models.json"
        if not arms.exists():
            save_models(default_models(), arms)
        return self

    # -- artifact paths ----------------------------------------------------
    def task_path(self, task_id: str) -> Path:
        return self.root / "tasks" / f"{task_id}.json"

    def load_task(self, task_id: str) -> TaskSpec:
        path = self.task_path(task_id)
        if not path.exists():
            builtin = builtin_tasks()
            if task_id in builtin:
                return builtin[task_id]
            raise FileNotFoundError(f"no task {task_id!r} under {self.root / 'tasks'}")
        return TaskSpec.load(path)

    def list_tasks(self) -> list:
        self_ids = sorted(p.stem for p in (self.root / "tasks").glob("*.json") if p.stem != "arm_models") if (self.root / "tasks").exists() else []
        return self_ids or sorted(builtin_tasks())

    def demo_dir(self, task_id: str, domain: str, seed: int) -> Path:
        return self.root / "demos" / f"{task_id}-{domain}-seed{seed:08d}"

    def dataset_dir(self, name: str) -> Path:
        return self.root / "datasets" / name

    def checkpoint_path(self, name: str) -> Path:
        name = name if name.endswith(".ckpt") else f"{name}.ckpt"
        return self.root / "checkpoints" / name

    def episode_path(self, episode_id: str) -> Path:
        return self.root / "episodes" / f"{episode_id}.jsonl"

    def session_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.jsonl"

    def report_path(self, name: str) -> Path:
        name = name if name.endswith(".json") else f"{name}.json"
        return self.root / "reports" / name

    def list_dir(self, kind: str) -> list:
        d = self.root / kind
        if not d.is_dir():
            return []
        return sorted(p.name for p in d.iterdir() if not p.name.startswith("."))

    # -- guarded writes ----------------------------------------------------
    def write_text(self, path: Path, content: str, force: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists() and not force:
            if path.read_text() != content:
                raise ContentMismatch(
                    f"{path} exists with different content; use force to replace"
                )
            return path
        path.write_text(content)
        return path
