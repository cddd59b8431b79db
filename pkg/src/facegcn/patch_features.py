"""KD-tree neighborhoods around landmarks and per-sequence feature tensors.

Each landmark gets a patch of its k nearest mesh vertices; a patch flattens
to 6k channels (relative xyz + rgb per neighbor, ordered by ascending
distance). A sequence of frames becomes one float32 tensor of shape
(6k, J, T).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import heapq

import numpy as np

from .errors import EmptyMesh, InconsistentLandmarks, InvariantError, ParseError
from .mesh_core import TexturedMesh

if TYPE_CHECKING:
    from .landmark_engine import LandmarkSet

_LEAF_SIZE = 32


class _Node:
    __slots__ = ("axis", "threshold", "left", "right", "indices")

    def __init__(self, axis=-1, threshold=0.0, left=None, right=None, indices=None):
        self.axis = axis
        self.threshold = threshold
        self.left = left
        self.right = right
        self.indices = indices  # leaf only


class KdIndex:
    """Exact k-nearest-neighbor index over a fixed 3D point set.

    Queries return exactly min(k, N) distinct point indices sorted by
    ascending (squared distance, index); equidistant points therefore come
    back in ascending index order.
    """

    def __init__(self, points: np.ndarray):
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if points.shape[0] == 0:
            raise EmptyMesh("cannot index zero points")
        if not np.isfinite(points).all():
            raise InvariantError("non-finite coordinates in point set")
        self.points = points
        self.n = points.shape[0]
        self._root = self._build(np.arange(self.n, dtype=np.int64))

    def _build(self, idx: np.ndarray) -> _Node:
        if idx.shape[0] <= _LEAF_SIZE:
            return _Node(indices=idx)
        pts = self.points[idx]
        spans = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spans))  # ties -> lowest axis
        order = np.argsort(pts[:, axis], kind="stable")
        idx = idx[order]
        mid = idx.shape[0] // 2
        threshold = float(self.points[idx[mid], axis])
        return _Node(
            axis=axis,
            threshold=threshold,
            left=self._build(idx[:mid]),
            right=self._build(idx[mid:]),
        )

    def k_nearest(self, query, k: int) -> np.ndarray:
        """Indices of the k nearest points to ``query`` (fewer if N < k)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        k = min(k, self.n)
        # max-heap of the current k best, keyed by (d2, index); the root is
        # the worst kept candidate, stored negated for heapq
        heap: list[tuple[float, int]] = []
        self._search(self._root, q, k, heap)
        ordered = sorted((-nd2, -ni) for nd2, ni in heap)
        return np.array([i for _, i in ordered], dtype=np.int64)

    def _search(self, node: _Node, q: np.ndarray, k: int, heap) -> None:
        if node.indices is not None:
            pts = self.points[node.indices]
            d2s = ((pts - q) ** 2).sum(axis=1)
            for d2, i in zip(d2s, node.indices):
                cand = (-float(d2), -int(i))
                if len(heap) < k:
                    heapq.heappush(heap, cand)
                elif cand > heap[0]:
                    heapq.heapreplace(heap, cand)
            return
        delta = q[node.axis] - node.threshold
        near, far = (node.left, node.right) if delta <= 0.0 else (node.right, node.left)
        self._search(near, q, k, heap)
        # the far side may still hold an equal-distance lower-index point,
        # so prune only on strictly larger plane distance
        if len(heap) < k or delta * delta <= -heap[0][0]:
            self._search(far, q, k, heap)


def build_kd_index(mesh: TexturedMesh) -> KdIndex:
    if mesh.n_vertices == 0:
        raise EmptyMesh("mesh has no vertices")
    return KdIndex(mesh.vertices)


@dataclass(frozen=True)
class Patch:
    """k nearest mesh vertices to one landmark, with relative xyz and rgb."""

    landmark_id: int
    point_indices: np.ndarray  # (k,) int64 ordered per KdIndex contract
    rel_positions: np.ndarray  # (k, 3) float64: vertex - landmark position
    colors: np.ndarray  # (k, 3) float64
    padded: bool = False  # last point repeated because the mesh had < k vertices

    @property
    def k(self) -> int:
        return self.point_indices.shape[0]


def extract_patch(
    index: KdIndex, mesh: TexturedMesh, landmark, k: int, scale_normalize: bool = False
) -> Patch:
    """Patch of the k nearest vertices to a landmark position.

    Meshes with fewer than k vertices repeat the last neighbor to pad, so
    the flattened channel count stays fixed at 6k. With scale_normalize the
    relative positions are divided by the largest neighbor distance
    (default off: raw landmark-relative coordinates).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    idx = index.k_nearest(landmark.position, k)
    padded = idx.shape[0] < k
    if padded:
        idx = np.concatenate([idx, np.full(k - idx.shape[0], idx[-1], dtype=np.int64)])
    rel = mesh.vertices[idx] - landmark.position
    if scale_normalize:
        scale = float(np.sqrt((rel * rel).sum(axis=1)).max())
        if scale > 0.0:
            rel = rel / scale
    return Patch(
        landmark_id=int(landmark.id),
        point_indices=idx,
        rel_positions=rel,
        colors=mesh.colors[idx].copy(),
        padded=padded,
    )


def patch_to_channels(patch: Patch) -> np.ndarray:
    """Flatten to 6k float32 channels: [rel xyz, rgb] per neighbor rank."""
    flat = np.concatenate([patch.rel_positions, patch.colors], axis=1)
    return flat.reshape(-1).astype(np.float32)


@dataclass(frozen=True)
class FeatureTensor:
    """Per-sequence features, float32, laid out (C, J, T) with C = 6k."""

    values: np.ndarray  # (C, J, T) float32
    k: int
    landmark_hash: int

    @property
    def C(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> int:
        return self.values.shape[2]

    def validate(self) -> None:
        if self.values.ndim != 3 or self.values.dtype != np.float32:
            raise InvariantError("feature tensor must be float32 with shape (C, J, T)")
        if self.C != 6 * self.k:
            raise InvariantError(f"C={self.C} != 6*k with k={self.k}")
        if not np.isfinite(self.values).all():
            raise InvariantError("non-finite feature values")


def build_sequence_tensor(
    frames: Sequence[tuple[TexturedMesh, "LandmarkSet"]], k: int, scale_normalize: bool = False
) -> FeatureTensor:
    """Stack per-landmark patch channels over all frames into (6k, J, T).

    All frames must agree on landmark count and logical ordering; the
    ordering hash is stored in the tensor metadata.
    """
    if not frames:
        raise InconsistentLandmarks("no frames given")
    _, lm0 = frames[0]
    j_count = len(lm0)
    lm_hash = lm0.ordering_hash()
    for t, (_, lms) in enumerate(frames):
        if len(lms) != j_count or lms.ordering_hash() != lm_hash:
            raise InconsistentLandmarks(f"frame {t} disagrees on landmark ordering")

    values = np.empty((6 * k, j_count, len(frames)), dtype=np.float32)
    for t, (mesh, lms) in enumerate(frames):
        index = build_kd_index(mesh)
        for j, lm in enumerate(lms):
            values[:, j, t] = patch_to_channels(
                extract_patch(index, mesh, lm, k, scale_normalize=scale_normalize)
            )
    tensor = FeatureTensor(values=values, k=k, landmark_hash=lm_hash)
    tensor.validate()
    return tensor


# ---------------------------------------------------------------------------
# FGT1 tensor cache: magic, u32 C/J/T/k, u64 ordering hash, C*J*T f32 LE

_FGT1_MAGIC = b"FGT1"
_FGT1_HEADER = struct.Struct("<4sIIIIQ")


def save_tensor(tensor: FeatureTensor, path) -> None:
    tensor.validate()
    header = _FGT1_HEADER.pack(
        _FGT1_MAGIC, tensor.C, tensor.J, tensor.T, tensor.k, tensor.landmark_hash
    )
    payload = np.ascontiguousarray(tensor.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def load_tensor(path) -> FeatureTensor:
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _FGT1_HEADER.size:
        raise ParseError("truncated FGT1 header", path=path)
    magic, c, j, t, k, lm_hash = _FGT1_HEADER.unpack_from(data, 0)
    if magic != _FGT1_MAGIC:
        raise ParseError(f"bad magic {magic!r}", path=path)
    need = _FGT1_HEADER.size + 4 * c * j * t
    if len(data) != need:
        raise ParseError(f"payload size {len(data)} != expected {need}", path=path)
    values = np.frombuffer(data, dtype="<f4", offset=_FGT1_HEADER.size).reshape(c, j, t)
    tensor = FeatureTensor(values=values.astype(np.float32), k=k, landmark_hash=lm_hash)
    tensor.validate()
    return tensor
