import numpy as np
import pytest

from facegcn.dataset_synth import (
    DatasetBuildResult,
    ExpressionParams,
    IdentityParams,
    SynthConfig,
    build_dataset,
    cross_emotion_split,
    default_augment_pairs,
    emotion_subset_splits,
    generate_sequence,
    landmark_grid_indices,
    make_frame_mesh,
)
from facegcn.errors import ConfigError, EmptySide, MissingIdentity
from facegcn.mesh_core import validate_mesh

FAST = SynthConfig(n_identities=3, emotions=(0, 1), T=3, k=4, grid=8, lm_grid=2, seed=11)


@pytest.fixture(scope="module")
def fast_dataset() -> DatasetBuildResult:
    return build_dataset(FAST)


def test_generated_meshes_are_valid():
    frames = generate_sequence(IdentityParams(seed=1, grid=8), ExpressionParams(emotion=3), 4, lm_grid=2)
    assert len(frames) == 4
    for mesh, lms in frames:
        assert validate_mesh(mesh).ok
        assert len(lms) == 4
        for e in lms:
            assert np.array_equal(e.position, mesh.vertices[e.anchor])


def test_zero_expression_amplitude_freezes_sequence():
    ident = IdentityParams(seed=2, grid=8)
    frames = generate_sequence(ident, ExpressionParams(emotion=0, amplitude=0.0), 5, lm_grid=2)
    v0 = frames[0][0].vertices
    for mesh, _ in frames[1:]:
        assert np.array_equal(mesh.vertices, v0)


def test_frame_zero_identical_across_emotions():
    ident = IdentityParams(seed=3, grid=8)
    a = generate_sequence(ident, ExpressionParams(emotion=0), 5, lm_grid=2)
    b = generate_sequence(ident, ExpressionParams(emotion=4), 5, lm_grid=2)
    assert np.array_equal(a[0][0].vertices, b[0][0].vertices)
    assert np.array_equal(a[-1][0].vertices, b[-1][0].vertices)  # envelope ends at 0
    assert not np.array_equal(a[2][0].vertices, b[2][0].vertices)  # peak differs


def test_identities_differ():
    ea = ExpressionParams(emotion=1)
    a = make_frame_mesh(IdentityParams(seed=4, grid=8), ea, 0, 4)
    b = make_frame_mesh(IdentityParams(seed=5, grid=8), ea, 0, 4)
    assert not np.array_equal(a.vertices, b.vertices)
    assert not np.array_equal(a.colors, b.colors)


def test_same_seed_bit_identical():
    ident = IdentityParams(seed=6, grid=8)
    e = ExpressionParams(emotion=2)
    m1 = make_frame_mesh(ident, e, 3, 6)
    m2 = make_frame_mesh(ident, e, 3, 6)
    assert np.array_equal(m1.vertices, m2.vertices)
    assert np.array_equal(m1.colors, m2.colors)


def test_landmark_grid_indices_shape_and_range():
    idx = landmark_grid_indices(24, 4)
    assert idx.shape == (16,)
    assert len(set(idx.tolist())) == 16
    assert idx.min() >= 0 and idx.max() < 24 * 24
    with pytest.raises(ConfigError):
        landmark_grid_indices(4, 9)


def test_default_augment_pairs_count():
    pairs = default_augment_pairs(4)
    assert len(pairs) == 12
    assert all(0 <= a < 16 and 0 <= b < 16 and a != b for a, b in pairs)


def test_build_dataset_counts_and_labels(fast_dataset):
    samples = fast_dataset.samples
    assert len(samples) == 3 * 2
    for ident in range(3):
        assert sum(1 for s in samples if s.identity == ident) == 2
    # J = base 4 + 2 horizontal pairs
    assert all(s.tensor.J == 6 for s in samples)
    assert all(s.tensor.C == 6 * FAST.k for s in samples)
    assert all(s.tensor.T == FAST.T for s in samples)


def test_build_dataset_deterministic(fast_dataset):
    again = build_dataset(FAST)
    for a, b in zip(fast_dataset.samples, again.samples):
        assert np.array_equal(a.tensor.values, b.tensor.values)
        assert a.provenance == b.provenance


def test_landmark_hash_uniform_across_samples(fast_dataset):
    hashes = {s.tensor.landmark_hash for s in fast_dataset.samples}
    assert len(hashes) == 1


def test_separability_oracle(fast_dataset):
    assert fast_dataset.inter_identity_distance > fast_dataset.intra_identity_distance


def test_separability_violation_raises():
    bad = SynthConfig(n_identities=2, emotions=(0, 1), T=3, k=4, grid=8, lm_grid=2,
                      identity_amplitude=0.0001, expression_amplitude=0.3, seed=12)
    with pytest.raises(ConfigError):
        build_dataset(bad)


def test_build_dataset_validates_config():
    with pytest.raises(ConfigError):
        build_dataset(SynthConfig(n_identities=1))
    with pytest.raises(ConfigError):
        build_dataset(SynthConfig(emotions=()))
    with pytest.raises(ConfigError):
        build_dataset(SynthConfig(emotions=(0, 7)))


def test_expression_params_range():
    with pytest.raises(ConfigError):
        ExpressionParams(emotion=6)


# ---------------------------------------------------------------------------
# cross-emotion split


def test_split_half_and_half(fast_dataset):
    train, test = cross_emotion_split(fast_dataset.samples, (0,))
    assert len(train) == len(test) == 3
    assert {s.emotion for s in train} == {0}
    assert {s.emotion for s in test} == {1}


def test_split_counts_six_emotions():
    class S:  # structural stand-in
        def __init__(self, i, e):
            self.identity, self.emotion = i, e

    samples = [S(i, e) for i in range(10) for e in range(6)]
    train, test = cross_emotion_split(samples, (0, 1, 2))
    assert len(train) == len(test) == 30


def test_split_train_all_emotions_empty_side(fast_dataset):
    with pytest.raises(EmptySide):
        cross_emotion_split(fast_dataset.samples, (0, 1))


def test_split_partition_and_coverage(fast_dataset):
    train, test = cross_emotion_split(fast_dataset.samples, (1,))
    ids = {id(s) for s in fast_dataset.samples}
    assert {id(s) for s in train} | {id(s) for s in test} == ids
    assert not ({id(s) for s in train} & {id(s) for s in test})
    for side in (train, test):
        assert {s.identity for s in side} == {0, 1, 2}


def test_split_missing_identity():
    class S:
        def __init__(self, i, e):
            self.identity, self.emotion = i, e

    samples = [S(0, 0), S(0, 1), S(1, 0)]  # identity 1 has no emotion-1 sample
    with pytest.raises(MissingIdentity):
        cross_emotion_split(samples, (0,))


def test_emotion_subset_splits_enumerates_all_choices():
    class S:
        def __init__(self, i, e):
            self.identity, self.emotion = i, e

    samples = [S(i, e) for i in range(3) for e in range(6)]
    splits = list(emotion_subset_splits(samples, train_count=3))
    assert len(splits) == 20  # C(6, 3)
    assert len({subset for subset, _, _ in splits}) == 20
    for subset, train, test in splits:
        assert len(train) == len(test) == 9
        assert {s.emotion for s in train} == set(subset)
    with pytest.raises(EmptySide):
        list(emotion_subset_splits(samples, train_count=6))


def test_emotion_subset_protocol_averaging(fast_dataset):
    # two emotions -> C(2,1) = 2 subset protocols; train one tiny model per
    # subset and average the test accuracies
    from facegcn import st_graph, stgcn_net

    graph = st_graph.build_spatial_edges(fast_dataset.landmarks, "knn", knn_m=2)
    norm = st_graph.normalize_adjacency(graph, st_graph.partition(graph, "distance"))
    accs = []
    for subset, train, test in emotion_subset_splits(fast_dataset.samples, train_count=1):
        arch = stgcn_net.ModelArch(
            in_channels=train[0].tensor.C, block_channels=(8, 8), strides=(1, 1),
            kernel_size=3, num_classes=3,
        )
        model = stgcn_net.init_model(arch, norm, seed=13)
        stgcn_net.train_model(
            model, [(s.tensor.values, s.identity) for s in train],
            epochs=5, base_lr=0.01, momentum=0.95, weight_decay=0.0,
            decay_epochs=(), gamma=0.1, batch_size=3, seed=13,
        )
        c, t, _ = stgcn_net.evaluate(model, [(s.tensor.values, s.identity) for s in test])
        accs.append(c / t)
    assert len(accs) == 2
    assert 0.0 <= float(np.mean(accs)) <= 1.0
