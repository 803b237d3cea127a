import numpy as np
import pytest

from oxobot import numerics, perception
from oxobot.perception import (
    CELL, CIRCLE, CROSS, DebounceState, GRID, NOTHING, PerceptionModel,
    assemble_grid, augment, bounding_box, build_dataset, observe,
    split_grid, synthesize_seed_set, train_classifier,
)


def _zero_model():
    net = numerics.build_network(perception.PERCEPTION_ARCH,
                                 perception.PERCEPTION_INPUT_SHAPE,
                                 np.random.default_rng(0))
    net.set_param_vector(np.zeros(net.param_vector().size))
    return PerceptionModel(net)


class StubModel:
    """Classifier test double driven by mean intensity."""

    def classify(self, image):
        mean = float(np.asarray(image).mean())
        if mean > 0.5:
            return CROSS, np.array([0.0, 1.0, 0.0])
        if mean > 0.2:
            return CIRCLE, np.array([1.0, 0.0, 0.0])
        return NOTHING, np.array([0.0, 0.0, 1.0])


CROSS_IMG = np.ones((CELL, CELL))
CIRCLE_IMG = np.full((CELL, CELL), 0.3)
BLANK_IMG = np.zeros((CELL, CELL))


# ---------------------------------------------------------------------------
# synthesis and augmentation


def test_seed_set_size_balance_and_order():
    seeds = synthesize_seed_set(0, 36)
    assert len(seeds) == 108
    labels = [label for _, label in seeds]
    assert labels.count(CIRCLE) == labels.count(CROSS) == labels.count(NOTHING) == 36
    assert seeds[0][1] == CIRCLE
    for img, _ in seeds:
        assert img.shape == (CELL, CELL)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_blank_seeds_carry_no_ink():
    for img, label in synthesize_seed_set(1, 20):
        if label == NOTHING:
            assert img.mean() < 0.05


def test_seed_set_is_deterministic():
    a = synthesize_seed_set(7, 5)
    b = synthesize_seed_set(7, 5)
    for (ia, la), (ib, lb) in zip(a, b):
        assert la == lb and np.array_equal(ia, ib)
    c = synthesize_seed_set(8, 5)
    assert any(not np.array_equal(ia, ic) for (ia, _), (ic, _) in zip(a, c))


def test_augment_blank_returns_copies():
    img = np.zeros((CELL, CELL))
    out = augment((img, NOTHING), 5, np.random.default_rng(0))
    assert len(out) == 5
    for copy, label in out:
        assert label == NOTHING and np.array_equal(copy, img)


def test_augment_keeps_strokes_inside_and_spans_offsets():
    img = np.zeros((CELL, CELL))
    img[10:30, 10:30] = 1.0  # 20x20 block centred -> offsets in [-10, +10]
    rng = np.random.default_rng(1)
    out = augment((img, CROSS), 300, rng)
    assert len(out) == 300
    corners = set()
    for copy, label in out:
        assert label == CROSS
        box = bounding_box(copy)
        assert box is not None
        r0, r1, c0, c1 = box
        assert 0 <= r0 and r1 < CELL and 0 <= c0 and c1 < CELL
        assert (r1 - r0, c1 - c0) == (19, 19)
        corners.add((r0, c0))
    rows = {r for r, _ in corners}
    cols = {c for _, c in corners}
    assert min(rows) == 0 and max(rows) == 20  # full [-10,+10] range reached
    assert min(cols) == 0 and max(cols) == 20


def test_build_dataset_counts_and_balance():
    seeds = synthesize_seed_set(0, 6)
    X, y = build_dataset(seeds, 200, np.random.default_rng(2))
    assert X.shape == (200, CELL, CELL, 1)
    assert len(y) == 200
    counts = np.bincount(y, minlength=3)
    assert counts.min() >= 60  # roughly balanced


# ---------------------------------------------------------------------------
# classifier


def test_train_memorizes_one_sample_per_class():
    seeds = synthesize_seed_set(3, 1)
    X = np.stack([img for img, _ in seeds])[..., None]
    y = np.array([label for _, label in seeds])
    model, history = train_classifier((X, y), epochs=200, lr=0.05, rng_seed=0,
                                      batch_size=3)
    assert history[-1] == 1.0


def test_train_rejects_bad_datasets():
    with pytest.raises(ValueError):
        train_classifier((np.zeros((0, CELL, CELL, 1)), np.zeros(0, dtype=int)),
                         epochs=1, lr=0.01, rng_seed=0)
    X = np.zeros((4, CELL, CELL, 1))
    y = np.array([0, 0, 1, 1])
    with pytest.raises(ValueError):
        train_classifier((X, y), epochs=1, lr=0.01, rng_seed=0)


def test_classify_returns_argmax_and_tie_prefers_circle():
    model = _zero_model()  # all-zero parameters: every class scores zero
    label, scores = model.classify(np.random.default_rng(4).uniform(size=(CELL, CELL)))
    assert label == CIRCLE
    assert np.allclose(scores, 0.0)


def test_classify_label_has_max_score():
    seeds = synthesize_seed_set(5, 2)
    X = np.stack([img for img, _ in seeds])[..., None]
    y = np.array([label for _, label in seeds])
    model, _ = train_classifier((X, y), epochs=30, lr=0.05, rng_seed=1, batch_size=6)
    for img, _ in seeds:
        label, scores = model.classify(img)
        assert scores[label] == scores.max()


def test_model_save_load_round_trip(tmp_path):
    seeds = synthesize_seed_set(6, 1)
    X = np.stack([img for img, _ in seeds])[..., None]
    y = np.array([label for _, label in seeds])
    model, _ = train_classifier((X, y), epochs=5, lr=0.05, rng_seed=2, batch_size=3)
    path = tmp_path / "perc.model"
    model.save(path, {"note": "test"})
    loaded = PerceptionModel.load(path)
    probe = np.random.default_rng(5).uniform(size=(4, CELL, CELL, 1))
    assert np.array_equal(loaded.scores(probe), model.scores(probe))
    assert loaded.metadata["note"] == "test"
    assert loaded.metadata["seed"] == 2


# ---------------------------------------------------------------------------
# grid frames


def test_split_grid_uniform_and_locality():
    frame = np.full((GRID, GRID), 0.25)
    cells = split_grid(frame)
    assert len(cells) == 9
    for cell in cells:
        assert np.array_equal(cell, np.full((CELL, CELL), 0.25))

    frame = np.zeros((GRID, GRID))
    frame[:CELL, :CELL] = 1.0
    cells = split_grid(frame)
    assert cells[0].sum() > 0
    assert all(cells[i].sum() == 0 for i in range(1, 9))


def test_split_assemble_round_trip():
    frame = np.random.default_rng(6).uniform(size=(GRID, GRID))
    assert np.array_equal(assemble_grid(split_grid(frame)), frame)


def test_split_grid_rejects_wrong_size():
    with pytest.raises(ValueError):
        split_grid(np.zeros((100, 120)))


# ---------------------------------------------------------------------------
# debounce


def _frame_with(cell_imgs):
    cells = [BLANK_IMG.copy() for _ in range(9)]
    for idx, img in cell_imgs.items():
        cells[idx] = img
    return assemble_grid(cells)


def test_blank_frames_never_emit():
    state = DebounceState()
    model = StubModel()
    for _ in range(20):
        state, events = observe(state, _frame_with({}), model)
        assert events == []


def test_three_in_a_row_commits_exactly_once():
    state = DebounceState()
    model = StubModel()
    frame = _frame_with({4: CROSS_IMG})
    committed = []
    for _ in range(6):
        state, events = observe(state, frame, model)
        committed.extend(events)
    assert len(committed) == 1
    event = committed[0]
    assert event.who == "usr" and event.what == "draw"
    assert event.where == "middle" and event.symbol == "cross"


def test_interrupted_run_resets_the_streak():
    state = DebounceState()
    sequence = [CROSS, NOTHING, CROSS, CROSS, CROSS]
    commits = [state.push(4, label) for label in sequence]
    assert commits == [False, False, False, False, True]


def test_committed_cells_never_revert_or_re_emit():
    state = DebounceState()
    for _ in range(3):
        state.push(2, CIRCLE)
    assert state.committed[2] == CIRCLE
    for _ in range(5):
        assert state.push(2, CROSS) is False
    assert state.committed[2] == CIRCLE


def test_commit_external_marks_cell():
    state = DebounceState()
    state.commit_external(0, CIRCLE)
    assert state.committed[0] == CIRCLE
    for _ in range(4):
        assert state.push(0, CROSS) is False


def test_debounce_symbol_attribution_overrides_classifier(caplog):
    state = DebounceState(user_symbol_name="cross")
    model = StubModel()
    frame = _frame_with({1: CIRCLE_IMG})  # classifier says circle
    committed = []
    import logging
    with caplog.at_level(logging.WARNING, logger="oxobot.perception"):
        for _ in range(3):
            state, events = observe(state, frame, model)
            committed.extend(events)
    assert len(committed) == 1
    assert committed[0].symbol == "cross"  # inferred from who draws what
    assert any("classified as circle" in r.message for r in caplog.records)


# ---------------------------------------------------------------------------
# export


def test_pgm_export_and_manifest(tmp_path):
    seeds = synthesize_seed_set(9, 2)
    perception.export_image_corpus(seeds, tmp_path / "out")
    manifest = (tmp_path / "out" / "manifest.csv").read_text().strip().splitlines()
    assert manifest[0] == "filename,label"
    assert len(manifest) == 7
    first = manifest[1].split(",")[0]
    data = (tmp_path / "out" / first).read_bytes()
    assert data.startswith(b"P5\n40 40\n255\n")
    assert len(data) == len(b"P5\n40 40\n255\n") + CELL * CELL
