import math

import numpy as np
import pytest

from src.errors import (
    CountMismatchError,
    DimensionMismatchError,
    InvalidArgumentError,
    MalformedHeaderError,
    NonFiniteValueError,
    StoreDimensionError,
)
from src.embeddings import (
    HEADING_ONLY,
    NO_OBSERVATION,
    ORIENTATION_BLIND,
    BaseEmbedding,
    BaseEmbeddingSequence,
    EmbeddingStore,
    EmbeddingVector,
    ProjectionHead,
    SyntheticWorld,
    load_bases,
    load_store,
    pose_aware_embedding,
    pseudo_similarity,
    similarity,
    synth_observe,
    write_bases,
    write_store,
)
from src.grid import PoseTriplet, TileIndex, build_grid, displacement_in_tile, tile_of


def _write_raw(path, header, values):
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.asarray(values, dtype="<f4").tobytes())


def test_embedding_vector_is_normalized():
    v = EmbeddingVector([3.0, 4.0])
    assert np.linalg.norm(v.values) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        EmbeddingVector([0.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        EmbeddingVector([1.0, float("nan")])


def test_load_identity_store(tmp_path):
    grid = build_grid((0, 0), 60, 2, 2)
    path = tmp_path / "store.emb"
    _write_raw(path, "GEOEMB1 2 2 4\n", np.eye(4))
    store = load_store(path, grid)
    assert (store.rows, store.cols, store.dim) == (2, 2, 4)
    assert np.array_equal(store[TileIndex(0, 1)].values, [0.0, 1.0, 0.0, 0.0])
    assert np.array_equal(store[TileIndex(1, 1)].values, [0.0, 0.0, 0.0, 1.0])


def test_store_round_trip_is_byte_identical(tmp_path):
    grid = build_grid((0, 0), 60, 3, 5)
    rng = np.random.default_rng(7)
    table = rng.normal(size=(3, 5, 16))
    table /= np.linalg.norm(table, axis=2, keepdims=True)
    original = tmp_path / "original.emb"
    _write_raw(original, "GEOEMB1 3 5 16\n", table)
    copy = tmp_path / "copy.emb"
    write_store(load_store(original, grid), copy)
    assert copy.read_bytes() == original.read_bytes()


def test_store_load_errors_are_distinct(tmp_path):
    grid = build_grid((0, 0), 60, 2, 2)

    short = tmp_path / "short.emb"
    _write_raw(short, "GEOEMB1 2 2 4\n", np.eye(4)[:3])
    with pytest.raises(CountMismatchError):
        load_store(short, grid)

    bad_header = tmp_path / "header.emb"
    _write_raw(bad_header, "EMB 2 2 4\n", np.eye(4))
    with pytest.raises(MalformedHeaderError):
        load_store(bad_header, grid)

    wrong_grid = tmp_path / "grid.emb"
    _write_raw(wrong_grid, "GEOEMB1 1 4 4\n", np.eye(4))
    with pytest.raises(StoreDimensionError):
        load_store(wrong_grid, grid)

    nan = tmp_path / "nan.emb"
    values = np.eye(4)
    values[2, 1] = np.nan
    _write_raw(nan, "GEOEMB1 2 2 4\n", values)
    with pytest.raises(NonFiniteValueError):
        load_store(nan, grid)


def test_bases_round_trip(tmp_path):
    bases = [BaseEmbedding([1.0, 2.0, 3.0]), BaseEmbedding([-0.5, 0.25, 8.0])]
    path = tmp_path / "bases.emb"
    write_bases(bases, path)
    loaded = load_bases(path)
    assert [b.values.tolist() for b in loaded] == [b.values.tolist() for b in bases]


def test_pose_aware_embedding_is_deterministic():
    head = ProjectionHead.seeded(16, 12, 60.0, seed=5)
    base = BaseEmbedding(np.linspace(-1, 1, 12))
    pose = PoseTriplet(12.0, -7.5, 0.3)
    first = pose_aware_embedding(base, pose, head)
    second = pose_aware_embedding(base, pose, head)
    assert first.values.tobytes() == second.values.tobytes()


def test_heading_flip_changes_embedding():
    head = ProjectionHead.seeded(16, 12, 60.0, seed=5)
    base = BaseEmbedding(np.linspace(-1, 1, 12))
    a = pose_aware_embedding(base, PoseTriplet(5.0, 5.0, 0.2), head)
    b = pose_aware_embedding(base, PoseTriplet(5.0, 5.0, 0.2 - math.pi), head)
    assert similarity(a, b) < 1 - 1e-6


def test_zero_base_with_identity_head_isolates_pose():
    head = ProjectionHead.identity(3, 60.0)
    pose = PoseTriplet(15.0, -30.0, math.pi / 2)
    v = pose_aware_embedding(BaseEmbedding(np.zeros(3)), pose, head)
    expected = np.array([0.0, 0.0, 0.0, 0.5, -1.0, 1.0, math.cos(math.pi / 2)])
    expected /= np.linalg.norm(expected)
    assert v.values == pytest.approx(expected, abs=1e-12)


def test_pose_aware_embedding_rejects_non_finite_base():
    head = ProjectionHead.identity(2, 60.0)
    with pytest.raises(InvalidArgumentError):
        pose_aware_embedding(np.array([1.0, np.inf]), PoseTriplet(0, 0, 0), head)


def test_similarity_basics():
    v = EmbeddingVector([1.0, 2.0, 2.0])
    minus = EmbeddingVector([-1.0, -2.0, -2.0])
    assert similarity(v, v) == pytest.approx(1.0)
    assert similarity(v, minus) == pytest.approx(-1.0)
    assert similarity(EmbeddingVector([1, 0]), EmbeddingVector([0, 1])) == 0.0
    a, b = EmbeddingVector([0.3, -1.2, 0.5]), EmbeddingVector([2.0, 0.1, -0.4])
    assert similarity(a, b) == similarity(b, a)
    with pytest.raises(DimensionMismatchError):
        similarity(EmbeddingVector([1, 0]), EmbeddingVector([1, 0, 0]))


def test_particle_matching_its_store_vector_scores_one():
    grid = build_grid((0, 0), 60, 2, 2)
    head = ProjectionHead.seeded(8, 6, grid.spacing, seed=1)
    base = BaseEmbedding(np.arange(1.0, 7.0))
    match = pose_aware_embedding(base, PoseTriplet(0.0, 0.0, 0.4), head)
    table = np.tile(np.eye(8)[:1], (2, 2, 1)).astype(float)
    table[1, 0] = match.values
    store = EmbeddingStore(table)
    scores = pseudo_similarity(np.array([[30.0, 90.0]]), base, store, grid, 0.4, head)
    assert scores[0] == pytest.approx(1.0, abs=1e-6)


def test_out_of_bounds_particle_gets_sentinel():
    grid = build_grid((0, 0), 60, 2, 2)
    head = ProjectionHead.seeded(4, 4, grid.spacing, seed=1)
    store = EmbeddingStore(np.tile(np.eye(4)[:1], (2, 2, 1)))
    scores = pseudo_similarity(np.array([[-5.0, 10.0], [10.0, 10.0]]),
                               BaseEmbedding(np.ones(4)), store, grid, 0.0, head)
    assert np.isnan(scores[0])
    assert np.isnan(NO_OBSERVATION)
    assert not np.isnan(scores[1])


def test_store_grid_mismatch_is_rejected():
    head = ProjectionHead.seeded(4, 4, 60.0, seed=1)
    store = EmbeddingStore(np.tile(np.eye(4)[:1], (2, 2, 1)))
    with pytest.raises(DimensionMismatchError):
        pseudo_similarity(np.zeros((1, 2)), BaseEmbedding(np.ones(4)), store,
                          build_grid((0, 0), 60, 3, 3), 0.0, head)


def _naive_scores(xy, base, store, grid, heading, head, mode="pose-aware"):
    scores = []
    for point in xy:
        if not grid.contains(point):
            scores.append(NO_OBSERVATION)
            continue
        pose = displacement_in_tile(grid, point, heading)
        embedding = pose_aware_embedding(base, pose, head, mode)
        scores.append(similarity(embedding, store[tile_of(grid, point)]))
    return np.array(scores)


@pytest.mark.parametrize("rows,cols,n", [(1, 1, 1), (2, 2, 3), (3, 5, 200), (8, 8, 1000)])
@pytest.mark.parametrize("mode", ["pose-aware", HEADING_ONLY, ORIENTATION_BLIND])
def test_pseudo_similarity_matches_per_particle_loop(rows, cols, n, mode):
    rng = np.random.default_rng(rows * 100 + cols + n)
    grid = build_grid((-100.0, 40.0), 60, rows, cols)
    head = ProjectionHead.seeded(8, 10, grid.spacing, seed=rows + cols)
    store = EmbeddingStore(rng.normal(size=(rows, cols, 8)))
    base = BaseEmbedding(rng.normal(size=10))
    xmin, ymin, xmax, ymax = grid.bounds
    xy = rng.uniform((xmin - 30, ymin - 30), (xmax + 30, ymax + 30), size=(n, 2))
    fast = pseudo_similarity(xy, base, store, grid, 1.1, head, mode)
    slow = _naive_scores(xy, base, store, grid, 1.1, head, mode)
    assert np.array_equal(fast, slow, equal_nan=True)


def test_pose_split_cost_structure():
    grid = build_grid((0, 0), 60, 4, 4)
    rng = np.random.default_rng(2)
    head = ProjectionHead.seeded(8, 10, grid.spacing, seed=9)
    store = EmbeddingStore(rng.normal(size=(4, 4, 8)))
    provider = BaseEmbeddingSequence([BaseEmbedding(rng.normal(size=10)) for _ in range(3)])
    xy = rng.uniform(0, 240, size=(250, 2))

    pseudo_similarity(xy, provider(0), store, grid, 0.0, head)

    assert provider.calls == 1
    assert head.base_projections == 1
    assert head.pose_appends == 250


def test_synthetic_kernel_peak_and_decay():
    grid = build_grid((0, 0), 60, 10, 10)
    world = SyntheticWorld(rho=60.0, kappa=2.0)
    obs = synth_observe(world, grid, (300.0, 300.0, 0.5), np.random.default_rng(0))
    scores = obs.score(np.array([[300.0, 300.0], [360.0, 300.0]]), 0.5)
    assert scores[0] == pytest.approx(1.0)
    assert scores[1] == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_synthetic_mask_dominates_distance():
    grid = build_grid((0, 0), 60, 4, 4)
    world = SyntheticWorld(rho=60.0, mask=[(1, 1)], floor_score=0.0)
    obs = synth_observe(world, grid, (90.0, 90.0, 0.0), np.random.default_rng(0))
    assert obs.score(np.array([[90.0, 90.0]]), 0.0)[0] == 0.0

    zero_likelihood = SyntheticWorld(rho=60.0, mask=[(1, 1)], floor_score=None)
    obs = synth_observe(zero_likelihood, grid, (90.0, 90.0, 0.0), np.random.default_rng(0))
    assert np.isnan(obs.score(np.array([[90.0, 90.0]]), 0.0)[0])


def test_camera_on_a_mask_tile_is_blind():
    grid = build_grid((0, 0), 60, 4, 4)
    world = SyntheticWorld(rho=60.0, mask=[(1, 2)])
    assert world.blind_at(grid, (150.0, 90.0))
    assert not world.blind_at(grid, (90.0, 150.0))
    assert not world.blind_at(grid, (500.0, 90.0))
    assert not SyntheticWorld(rho=60.0).blind_at(grid, (150.0, 90.0))


def test_orientation_blind_scores_tile_centers_without_heading():
    grid = build_grid((0, 0), 60, 4, 4)
    world = SyntheticWorld(rho=60.0, kappa=5.0)
    obs = synth_observe(world, grid, (80.0, 100.0, 0.0), np.random.default_rng(0))
    xy = np.array([[61.0, 61.0], [119.0, 119.0]])
    blind = obs.score(xy, math.pi, ORIENTATION_BLIND)
    assert blind[0] == blind[1]
    center_d2 = (90.0 - 80.0) ** 2 + (90.0 - 100.0) ** 2
    assert blind[0] == pytest.approx(math.exp(-center_d2 / (2 * 60.0 ** 2)))
    heading_only = obs.score(xy, math.pi, HEADING_ONLY)
    assert heading_only[0] == pytest.approx(blind[0] * math.exp(-10.0))


def test_confusers_add_with_the_same_kernel():
    grid = build_grid((0, 0), 60, 10, 10)
    world = SyntheticWorld(rho=60.0, confusers=[(100.0, 100.0, 0.0)])
    obs = synth_observe(world, grid, (500.0, 500.0, 0.0), np.random.default_rng(0))
    assert obs.score(np.array([[100.0, 100.0]]), 0.0)[0] == pytest.approx(1.0, abs=1e-12)


def test_synthetic_scorer_peaks_at_truth():
    grid = build_grid((0, 0), 60, 8, 8)
    world = SyntheticWorld(rho=90.0, kappa=4.0)
    truth = (213.0, 171.0, 0.8)
    obs = synth_observe(world, grid, truth, np.random.default_rng(0))
    xs, ys = np.meshgrid(np.arange(0.0, 480.0, 3.0), np.arange(0.0, 480.0, 3.0))
    candidates = np.column_stack([xs.ravel(), ys.ravel()])
    best = None
    for heading in np.linspace(-math.pi, math.pi, 24, endpoint=False):
        scores = obs.score(candidates, heading)
        i = int(np.argmax(scores))
        if best is None or scores[i] > best[0]:
            best = (scores[i], candidates[i], heading)
    assert math.dist(best[1], truth[:2]) <= 3.0
    assert obs.score(np.array([truth[:2]]), truth[2])[0] >= best[0]


def test_synthetic_noise_is_seeded():
    grid = build_grid((0, 0), 60, 4, 4)
    world = SyntheticWorld(rho=60.0, sigma_obs=0.1)
    xy = np.random.default_rng(1).uniform(0, 240, size=(50, 2))
    a = synth_observe(world, grid, (100.0, 100.0, 0.0), np.random.default_rng(4)).score(xy, 0.0)
    b = synth_observe(world, grid, (100.0, 100.0, 0.0), np.random.default_rng(4)).score(xy, 0.0)
    assert np.array_equal(a, b)
    assert np.all((a >= -1.0) & (a <= 1.0))


def test_synth_observe_requires_in_bounds_truth():
    grid = build_grid((0, 0), 60, 2, 2)
    with pytest.raises(InvalidArgumentError):
        synth_observe(SyntheticWorld(rho=60.0), grid, (500.0, 0.0, 0.0), np.random.default_rng(0))
