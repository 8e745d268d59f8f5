"""Encoding of subtask queries into the fixed 15-dimensional policy input:
[type(1), start position(3) + quaternion(4), end position(3) + quaternion(4)].
"""

from __future__ import annotations

import numpy as np

from ..geometry import Pose
from ..tasks import SubtaskSpec

QUERY_DIM = 15
MAX_SUBTASK_TYPES = 8  # normalizes the subtask-type slot into [0, 1]


def encode_parts(type_index: int, p_s: Pose, p_e: Pose) -> np.ndarray:
    q = np.empty(QUERY_DIM)
    q[0] = type_index / MAX_SUBTASK_TYPES
    q[1:4] = p_s.position
    q[4:8] = p_s.orientation
    q[8:11] = p_e.position
    q[11:15] = p_e.orientation
    return q


def encode_query(sub: SubtaskSpec) -> np.ndarray:
    return encode_parts(sub.type_index, sub.p_s, sub.p_e)


def decode_query(q: np.ndarray):
    """(type_index, p_s, p_e) back from a query vector."""
    q = np.asarray(q, dtype=float)
    if q.shape != (QUERY_DIM,):
        raise ValueError(f"query must have shape ({QUERY_DIM},), got {q.shape}")
    type_index = int(round(q[0] * MAX_SUBTASK_TYPES))
    p_s = Pose(q[1:4].copy(), q[4:8] / np.linalg.norm(q[4:8]))
    p_e = Pose(q[8:11].copy(), q[11:15] / np.linalg.norm(q[11:15]))
    return type_index, p_s, p_e
