"""Synthetic dynamic textured face-like mesh sequences.

Stands in for license-restricted motion-capture data at desk scale: each
identity is an ellipsoid-dome grid mesh with a seeded smooth displacement
field and a per-region color palette; each of the 6 emotions deforms fixed
mouth/eye regions with a neutral-peak-neutral amplitude envelope. The
cross-emotion split trains on some expressions and tests identification on
the held-out ones.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptySide, MissingIdentity
from .landmark_engine import BASE, Landmark, LandmarkSet, augment_landmarks
from .mesh_core import TexturedMesh, build_edge_graph
from .patch_features import FeatureTensor, build_sequence_tensor

N_EMOTIONS = 6

# fixed facial regions of the (u, v) parameter square: mouth, left eye, right eye
_REGION_CENTERS = ((0.5, 0.3), (0.35, 0.7), (0.65, 0.7))
_EMOTION_ENTROPY = 7707  # seeds the per-emotion deformation templates


@dataclass(frozen=True)
class IdentityParams:
    """Seeded identity: dome geometry plus smooth displacement and palette."""

    seed: int
    grid: int = 24
    radii: tuple[float, float, float] = (1.0, 1.3, 0.8)
    amplitude: float = 0.18
    n_modes: int = 4
    palette_regions: int = 4


@dataclass(frozen=True)
class ExpressionParams:
    """One of 6 emotions; localized bumps scaled by a neutral-peak-neutral envelope."""

    emotion: int
    amplitude: float = 0.035
    n_bumps: int = 3

    def __post_init__(self):
        if not (0 <= self.emotion < N_EMOTIONS):
            raise ConfigError(f"emotion {self.emotion} outside 0..{N_EMOTIONS - 1}")


@dataclass(frozen=True)
class SequenceSample:
    tensor: FeatureTensor
    identity: int
    emotion: int
    provenance: dict = field(default_factory=dict)


def _grid_faces(n: int) -> np.ndarray:
    idx = np.arange(n * n).reshape(n, n)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[:-1, 1:].ravel()
    d = idx[1:, 1:].ravel()
    return np.concatenate(
        [np.stack([a, b, c], axis=1), np.stack([b, d, c], axis=1)], axis=0
    )


def _identity_fields(params: IdentityParams):
    rng = np.random.default_rng(params.seed)
    modes = []
    for _ in range(params.n_modes):
        amp = rng.uniform(0.5, 1.0) * (1.0 if rng.random() < 0.5 else -1.0)
        fu, fv = rng.integers(1, 4), rng.integers(1, 4)
        pu, pv = rng.uniform(0, 2 * np.pi), rng.uniform(0, 2 * np.pi)
        modes.append((amp, int(fu), int(fv), pu, pv))
    r = params.palette_regions
    palette = rng.uniform(0.02, 0.98, size=(r * r, 3))
    palette = np.round(palette * 255.0) / 255.0  # uchar domain for exact round trips
    return modes, palette


def _emotion_template(expr: ExpressionParams):
    rng = np.random.default_rng([_EMOTION_ENTROPY, expr.emotion])
    bumps = []
    for b in range(expr.n_bumps):
        cu, cv = _REGION_CENTERS[b % len(_REGION_CENTERS)]
        cu += rng.uniform(-0.06, 0.06)
        cv += rng.uniform(-0.06, 0.06)
        width = rng.uniform(0.08, 0.18)
        strength = rng.uniform(0.5, 1.0) * (1.0 if rng.random() < 0.5 else -1.0)
        bumps.append((cu, cv, width, strength))
    return bumps


def _envelope(t: int, T: int) -> float:
    if T < 2:
        return 0.0
    return float(np.sin(np.pi * t / (T - 1)) ** 2)


def make_frame_mesh(identity: IdentityParams, expr: ExpressionParams, t: int, T: int) -> TexturedMesh:
    """Mesh at frame t: dome + identity displacement + enveloped expression bumps."""
    n = identity.grid
    if n < 2:
        raise ConfigError(f"grid resolution {n} too small")
    lin = np.linspace(0.0, 1.0, n)
    u, v = np.meshgrid(lin, lin, indexing="ij")
    su, sv = 2.0 * u - 1.0, 2.0 * v - 1.0
    rx, ry, rz = identity.radii

    z = rz * np.sqrt(np.clip(1.0 - su**2 - sv**2, 0.0, None))
    modes, palette = _identity_fields(identity)
    for amp, fu, fv, pu, pv in modes:
        z = z + identity.amplitude * amp * np.cos(2 * np.pi * fu * u + pu) * np.cos(
            2 * np.pi * fv * v + pv
        )
    env = _envelope(t, T)
    if env > 0.0:
        for cu, cv, width, strength in _emotion_template(expr):
            z = z + env * expr.amplitude * strength * np.exp(
                -((u - cu) ** 2 + (v - cv) ** 2) / width**2
            )

    vertices = np.stack([rx * su, ry * sv, z], axis=-1).reshape(-1, 3)
    r = identity.palette_regions
    iu = np.minimum((u * r).astype(int), r - 1)
    iv = np.minimum((v * r).astype(int), r - 1)
    colors = palette[(iu * r + iv).reshape(-1)]
    uv = np.stack([u, v], axis=-1).reshape(-1, 2)

    # quantize to the canonical on-disk domain so write/load is bit-exact
    vertices = vertices.astype(np.float32).astype(np.float64)
    uv = uv.astype(np.float32).astype(np.float64)
    return TexturedMesh.from_arrays(vertices, _grid_faces(n), colors, uv)


def landmark_grid_indices(grid: int, lm_grid: int) -> np.ndarray:
    """Vertex indices of an lm_grid x lm_grid interior sample of the mesh grid."""
    if not (1 <= lm_grid <= grid):
        raise ConfigError(f"landmark grid {lm_grid} incompatible with mesh grid {grid}")
    picks = np.round(np.linspace(0.15 * (grid - 1), 0.85 * (grid - 1), lm_grid)).astype(int)
    rows, cols = np.meshgrid(picks, picks, indexing="ij")
    return (rows * grid + cols).reshape(-1)


def default_augment_pairs(lm_grid: int) -> list[tuple[int, int]]:
    """Horizontal-neighbor pairs of the landmark sample grid."""
    pairs = []
    for r in range(lm_grid):
        for c in range(lm_grid - 1):
            pairs.append((r * lm_grid + c, r * lm_grid + c + 1))
    return pairs


def _base_landmarks(mesh: TexturedMesh, anchors: np.ndarray) -> LandmarkSet:
    entries = []
    for i, a in enumerate(anchors):
        pos = np.array(mesh.vertices[a], dtype=np.float64)
        pos.flags.writeable = False
        entries.append(Landmark(id=i, anchor=int(a), position=pos, kind=BASE))
    return LandmarkSet(entries=tuple(entries))


def generate_sequence(
    identity: IdentityParams,
    expr: ExpressionParams,
    T: int,
    lm_grid: int = 4,
) -> list[tuple[TexturedMesh, LandmarkSet]]:
    """T frames of (mesh, base landmark set); deterministic given the seeds."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    anchors = landmark_grid_indices(identity.grid, lm_grid)
    frames = []
    for t in range(T):
        mesh = make_frame_mesh(identity, expr, t, T)
        frames.append((mesh, _base_landmarks(mesh, anchors)))
    return frames


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 10
    emotions: tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    T: int = 24
    k: int = 25
    grid: int = 24
    lm_grid: int = 4
    identity_amplitude: float = 0.18
    expression_amplitude: float = 0.035
    seed: int = 7

    def identity_params(self, i: int) -> IdentityParams:
        return IdentityParams(seed=self.seed * 100_003 + i, grid=self.grid,
                              amplitude=self.identity_amplitude)

    def expression_params(self, e: int) -> ExpressionParams:
        return ExpressionParams(emotion=e, amplitude=self.expression_amplitude)


@dataclass
class DatasetBuildResult:
    samples: list[SequenceSample]
    landmarks: LandmarkSet  # augmented set of the first frame (graph topology source)
    inter_identity_distance: float
    intra_identity_distance: float


def build_dataset(cfg: SynthConfig, augment_pairs: Sequence[tuple[int, int]] | None = None,
                  scale_normalize: bool = False, progress=None) -> DatasetBuildResult:
    """One SequenceSample per (identity, emotion) with augmented landmarks.

    Runs the separability oracle: the mean inter-identity neutral-frame
    vertex distance must exceed the mean intra-identity cross-emotion
    distance at peak deformation, otherwise the task is ill-posed and a
    ConfigError is raised.
    """
    if cfg.n_identities < 2:
        raise ConfigError("need at least 2 identities")
    if not cfg.emotions:
        raise ConfigError("need at least 1 emotion")
    for e in cfg.emotions:
        if not (0 <= e < N_EMOTIONS):
            raise ConfigError(f"emotion {e} outside 0..{N_EMOTIONS - 1}")
    if augment_pairs is None:
        augment_pairs = default_augment_pairs(cfg.lm_grid)

    samples: list[SequenceSample] = []
    first_landmarks: LandmarkSet | None = None
    neutral_frames: dict[int, np.ndarray] = {}
    peak_frames: dict[tuple[int, int], np.ndarray] = {}
    for i in range(cfg.n_identities):
        ident = cfg.identity_params(i)
        for e in cfg.emotions:
            expr = cfg.expression_params(e)
            frames = generate_sequence(ident, expr, cfg.T, lm_grid=cfg.lm_grid)
            neutral_frames.setdefault(i, frames[0][0].vertices)
            peak_frames[(i, e)] = frames[len(frames) // 2][0].vertices
            augmented = []
            for mesh, base in frames:
                graph = build_edge_graph(mesh)
                result = augment_landmarks(mesh, graph, base, augment_pairs)
                augmented.append((mesh, result.landmarks))
            tensor = build_sequence_tensor(augmented, cfg.k, scale_normalize=scale_normalize)
            if first_landmarks is None:
                first_landmarks = augmented[0][1]
            samples.append(
                SequenceSample(
                    tensor=tensor,
                    identity=i,
                    emotion=e,
                    provenance={
                        "identity_seed": ident.seed,
                        "k": cfg.k,
                        "J": tensor.J,
                        "T": cfg.T,
                    },
                )
            )
            if progress is not None:
                progress(i, e)

    inter, intra = _separability(neutral_frames, peak_frames, cfg)
    if intra > 0 and inter <= intra:
        raise ConfigError(
            f"identity separability violated: inter={inter:.4g} <= intra={intra:.4g}; "
            "raise identity_amplitude or lower expression_amplitude"
        )
    return DatasetBuildResult(
        samples=samples,
        landmarks=first_landmarks,
        inter_identity_distance=inter,
        intra_identity_distance=intra,
    )


def _separability(neutral, peak, cfg: SynthConfig) -> tuple[float, float]:
    ids = sorted(neutral)
    inter_vals = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            d = np.linalg.norm(neutral[ids[a]] - neutral[ids[b]], axis=1).mean()
            inter_vals.append(d)
    intra_vals = []
    emos = sorted(cfg.emotions)
    for i in ids:
        for a in range(len(emos)):
            for b in range(a + 1, len(emos)):
                d = np.linalg.norm(peak[(i, emos[a])] - peak[(i, emos[b])], axis=1).mean()
                intra_vals.append(d)
    inter = float(np.mean(inter_vals)) if inter_vals else np.inf
    intra = float(np.mean(intra_vals)) if intra_vals else 0.0
    return inter, intra


def emotion_subset_splits(
    samples: Sequence[SequenceSample], train_count: int = 3
):
    """Yield (train_emotions, train, test) for every train-emotion subset.

    Optional protocol-averaging mode: iterate the C(n, train_count) choices
    of training emotions and average the resulting test accuracies. The
    single-subset protocol stays the default.
    """
    present = sorted({s.emotion for s in samples})
    if not (0 < train_count < len(present)):
        raise EmptySide(f"train_count {train_count} leaves an empty side")
    for subset in itertools.combinations(present, train_count):
        train, test = cross_emotion_split(samples, subset)
        yield subset, train, test


def cross_emotion_split(
    samples: Sequence[SequenceSample], train_emotions: Sequence[int]
) -> tuple[list[SequenceSample], list[SequenceSample]]:
    """Train on the configured emotions, test identification on the rest."""
    train_set = set(int(e) for e in train_emotions)
    present = {s.emotion for s in samples}
    if not train_set & present:
        raise EmptySide("no sample carries a training emotion")
    train = [s for s in samples if s.emotion in train_set]
    test = [s for s in samples if s.emotion not in train_set]
    if not train or not test:
        raise EmptySide("split leaves one side empty")
    identities = {s.identity for s in samples}
    for name, side in (("train", train), ("test", test)):
        covered = {s.identity for s in side}
        missing = identities - covered
        if missing:
            raise MissingIdentity(f"identities {sorted(missing)} absent from the {name} side")
    return train, test
