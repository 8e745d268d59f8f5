"""Validated training datasets: source-tagged (query, trajectory) pairs with
a manifest, stored as a directory of sharded JSON-Lines files.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajectory import Trajectory

SHARD_SIZE = 4000


class InsufficientSource(ValueError):
    """A mixing source holds fewer entries than the mix requires."""


@dataclass
class Entry:
    query: np.ndarray  # 15-dim policy input
    trajectory: Trajectory
    subtask_id: str
    type_index: int
    domain: str
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "query": [float(v) for v in self.query],
            "subtask_id": self.subtask_id,
            "type_index": self.type_index,
            "domain": self.domain,
            "provenance": self.provenance,
            "trajectory": self.trajectory.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Entry":
        return Entry(
            query=np.array(d["query"], dtype=float),
            trajectory=Trajectory.from_dict(d["trajectory"]),
            subtask_id=d["subtask_id"],
            type_index=d["type_index"],
            domain=d["domain"],
            provenance=d["provenance"],
        )


@dataclass
class Dataset:
    entries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def manifest(self) -> dict:
        by_subtask = Counter(e.subtask_id for e in self.entries)
        by_domain = Counter(e.domain for e in self.entries)
        by_chain = Counter("+".join(e.provenance.get("chain", [])) or "none" for e in self.entries)
        by_source = Counter(e.provenance.get("source", "demo") for e in self.entries)
        return {
            "total": len(self.entries),
            "by_subtask": dict(sorted(by_subtask.items())),
            "by_domain": dict(sorted(by_domain.items())),
            "by_transform": dict(sorted(by_chain.items())),
            "by_source": dict(sorted(by_source.items())),
            "meta": self.meta,
        }

    def extend(self, other: "Dataset") -> None:
        self.entries.extend(other.entries)

    def subsample(self, n: int, seed: int) -> "Dataset":
        """Uniform subsample without replacement (for dataset-size sweeps)."""
        if n > len(self.entries):
            raise InsufficientSource(f"requested {n} of {len(self.entries)} entries")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
        idx = rng.choice(len(self.entries), size=n, replace=False)
        sub = Dataset(entries=[self.entries[i] for i in sorted(idx)], meta=dict(self.meta))
        sub.meta["subsampled_from"] = len(self.entries)
        return sub

    def save(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        shards = []
        for s in range(0, max(len(self.entries), 1), SHARD_SIZE):
            chunk = self.entries[s : s + SHARD_SIZE]
            name = f"entries-{s // SHARD_SIZE:05d}.jsonl"
            with open(out_dir / name, "w") as fh:
                for e in chunk:
                    fh.write(json.dumps(e.to_dict(), sort_keys=True, separators=(",", ":")))
                    fh.write("\n")
            shards.append({"file": name, "count": len(chunk)})
            if not self.entries:
                break
        manifest = self.manifest()
        manifest["shards"] = shards
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return out_dir

    @staticmethod
    def load(in_dir: Path) -> "Dataset":
        in_dir = Path(in_dir)
        manifest = json.loads((in_dir / "manifest.json").read_text())
        entries = []
        for shard in manifest["shards"]:
            with open(in_dir / shard["file"]) as fh:
                for line in fh:
                    if line.strip():
                        entries.append(Entry.from_dict(json.loads(line)))
        ds = Dataset(entries=entries, meta=manifest.get("meta", {}))
        recount = len(entries)
        if recount != manifest["total"]:
            raise ValueError(f"manifest total {manifest['total']} != {recount} entries on disk")
        return ds


def mix_sources(a: Dataset, b: Dataset, ratio_a: float, n: int, seed: int) -> Dataset:
    """Sample round(ratio_a * n) entries from a and the rest from b, without
    replacement, tagging each entry's provenance with its source."""
    if not 0.0 <= ratio_a <= 1.0:
        raise ValueError("ratio_a must lie in [0, 1]")
    n_a = int(round(ratio_a * n))
    n_b = n - n_a
    if n_a > len(a):
        raise InsufficientSource(f"source a has {len(a)} entries, need {n_a}")
    if n_b > len(b):
        raise InsufficientSource(f"source b has {len(b)} entries, need {n_b}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    idx_a = rng.choice(len(a), size=n_a, replace=False)
    idx_b = rng.choice(len(b), size=n_b, replace=False)
    entries = []
    for i in sorted(idx_a):
        e = a.entries[i]
        entries.append(
            Entry(e.query, e.trajectory, e.subtask_id, e.type_index, e.domain,
                  {**e.provenance, "source": "a"})
        )
    for i in sorted(idx_b):
        e = b.entries[i]
        entries.append(
            Entry(e.query, e.trajectory, e.subtask_id, e.type_index, e.domain,
                  {**e.provenance, "source": "b"})
        )
    return Dataset(entries=entries, meta={"mix": {"ratio_a": ratio_a, "n_a": n_a, "n_b": n_b, "seed": seed}})
