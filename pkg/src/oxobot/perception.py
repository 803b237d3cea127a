"""Symbol perception: seed-image synthesis, augmentation, the grid-cell
classifier, frame splitting, and the debounce that turns noisy per-tick
classifications into committed game-move events.

Images are 40x40 float64 grids in [0, 1], ink-on-dark (0 = background).
A full grid frame is 120x120 and splits into 9 cells, row-major.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from pathlib import Path

import numpy as np

from . import numerics, persist
from .game import GameMoveEvent, LOCATIONS

logger = logging.getLogger(__name__)

CELL = 40
GRID = 3 * CELL

CIRCLE, CROSS, NOTHING = 0, 1, 2
LABEL_NAMES = ("circle", "cross", "nothing")
LABEL_INDEX = {name: i for i, name in enumerate(LABEL_NAMES)}

INK_THRESHOLD = 0.05

PERCEPTION_INPUT_SHAPE = (CELL, CELL, 1)
PERCEPTION_ARCH = (
    {"kind": "conv", "filters": 8, "kernel": [5, 5], "stride": 1, "padding": "same"},
    {"kind": "rectifier"},
    {"kind": "maxpool", "size": [2, 2], "stride": 2},
    {"kind": "conv", "filters": 16, "kernel": [3, 3], "stride": 1, "padding": "valid"},
    {"kind": "rectifier"},
    {"kind": "maxpool", "size": [3, 3], "stride": 3},
    {"kind": "flatten"},
    {"kind": "svm-head", "classes": 3},
)


# ---------------------------------------------------------------------------
# synthetic drawings


def _stamp_disc(img, cy, cx, radius, intensity):
    r = int(np.ceil(radius))
    y0, y1 = max(0, int(cy) - r), min(CELL, int(cy) + r + 2)
    x0, x1 = max(0, int(cx) - r), min(CELL, int(cx) + r + 2)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    patch = img[y0:y1, x0:x1]
    patch[mask] = np.maximum(patch[mask], intensity)


def _draw_polyline(img, points, width, intensity):
    radius = width / 2.0
    for (y0, x0), (y1, x1) in zip(points[:-1], points[1:]):
        length = max(abs(y1 - y0), abs(x1 - x0), 1e-9)
        steps = max(2, int(length / 0.4))
        for t in np.linspace(0.0, 1.0, steps):
            _stamp_disc(img, y0 + t * (y1 - y0), x0 + t * (x1 - x0), radius, intensity)


def _background(rng):
    img = rng.uniform(0.0, 0.02, size=(CELL, CELL))
    for _ in range(int(rng.integers(0, 4))):
        y, x = rng.integers(0, CELL, size=2)
        img[y, x] = rng.uniform(0.05, 0.25)
    return img


def _synth_circle(rng):
    img = _background(rng)
    cy, cx = 20 + rng.uniform(-2, 2, size=2)
    ry, rx = rng.uniform(8, 13, size=2)
    n_seg = int(rng.integers(8, 15))
    start = rng.uniform(0, 2 * np.pi)
    sweep = 2 * np.pi * rng.uniform(0.92, 1.0)
    points = []
    for i in range(n_seg + 1):
        angle = start + sweep * i / n_seg
        points.append((cy + ry * np.sin(angle) + rng.uniform(-2, 2),
                       cx + rx * np.cos(angle) + rng.uniform(-2, 2)))
    _draw_polyline(img, points, rng.uniform(2, 3), rng.uniform(0.7, 1.0))
    return np.clip(img, 0.0, 1.0)


def _jittered_stroke(rng, start, end, n_seg):
    points = [start]
    for i in range(1, n_seg):
        t = i / n_seg
        points.append((start[0] + t * (end[0] - start[0]) + rng.uniform(-2, 2),
                       start[1] + t * (end[1] - start[1]) + rng.uniform(-2, 2)))
    points.append(end)
    return points


def _synth_cross(rng):
    img = _background(rng)
    cy, cx = 20 + rng.uniform(-2, 2, size=2)
    half = rng.uniform(7, 12)
    width = rng.uniform(2, 3)
    intensity = rng.uniform(0.7, 1.0)
    for sy, sx in ((1, 1), (1, -1)):
        start = (cy - half * sy + rng.uniform(-2, 2), cx - half * sx + rng.uniform(-2, 2))
        end = (cy + half * sy + rng.uniform(-2, 2), cx + half * sx + rng.uniform(-2, 2))
        n_seg = int(rng.integers(4, 8))
        _draw_polyline(img, _jittered_stroke(rng, start, end, n_seg), width, intensity)
    return np.clip(img, 0.0, 1.0)


def _synth_nothing(rng):
    return np.clip(_background(rng), 0.0, 1.0)


_SYNTH_FOR_LABEL = {CIRCLE: _synth_circle, CROSS: _synth_cross, NOTHING: _synth_nothing}


def synthesize_seed_set(rng_seed: int, per_class: int):
    """Balanced labeled cell images, round-robin circle/cross/nothing."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(rng_seed)
    seeds = []
    for _ in range(per_class):
        for label in (CIRCLE, CROSS, NOTHING):
            seeds.append((_SYNTH_FOR_LABEL[label](rng), label))
    return seeds


def bounding_box(img, threshold: float = INK_THRESHOLD - 0.01):
    """Inclusive (r0, r1, c0, c1) bounds of the inked pixels, or None."""
    mask = img > threshold
    if not mask.any():
        return None
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def augment(seed, count: int, rng):
    """Translated copies of a seed drawing; the stroke box stays in frame."""
    img, label = seed
    box = bounding_box(img)
    if box is None:
        return [(img.copy(), label) for _ in range(count)]
    r0, r1, c0, c1 = box
    dys = np.arange(-r0, CELL - 1 - r1 + 1)
    dxs = np.arange(-c0, CELL - 1 - c1 + 1)
    if len(dys) == 1 and len(dxs) == 1:
        return [(img.copy(), label)]
    out = []
    for _ in range(count):
        dy = int(dys[rng.integers(len(dys))])
        dx = int(dxs[rng.integers(len(dxs))])
        shifted = np.zeros_like(img)
        shifted[max(0, dy):CELL + min(0, dy), max(0, dx):CELL + min(0, dx)] = \
            img[max(0, -dy):CELL - max(0, dy), max(0, -dx):CELL - max(0, dx)]
        out.append((shifted, label))
    return out


def build_dataset(seeds, total: int, rng):
    """Augment a seed set up to `total` images; returns (X, y) shuffled."""
    per_seed = total // len(seeds)
    remainder = total - per_seed * len(seeds)
    images, labels = [], []
    for i, seed in enumerate(seeds):
        count = per_seed + (1 if i < remainder else 0)
        if count == 0:
            continue
        for img, label in augment(seed, count, rng):
            images.append(img)
            labels.append(label)
    order = rng.permutation(len(images))
    X = np.asarray(images)[order][..., None]
    y = np.asarray(labels, dtype=int)[order]
    return X, y


# ---------------------------------------------------------------------------
# classifier


class PerceptionModel:
    """Conv feature extractor with a 3-class SVM head; immutable once trained."""

    def __init__(self, network: numerics.Network, metadata: dict | None = None):
        self.network = network
        self.metadata = dict(metadata or {})

    def scores(self, images: np.ndarray) -> np.ndarray:
        if images.ndim == 3:
            images = images[..., None]
        return self.network.forward(images)[-1]

    def classify(self, image: np.ndarray):
        """(label, scores) for one 40x40 cell; ties prefer circle < cross < nothing."""
        scores = self.scores(np.asarray(image, dtype=float).reshape(1, CELL, CELL, 1))[0]
        return int(np.argmax(scores)), scores

    def classify_batch(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(images), axis=1)

    def accuracy(self, X: np.ndarray, y: np.ndarray, batch: int = 256) -> float:
        correct = 0
        for i in range(0, len(y), batch):
            correct += int((self.classify_batch(X[i:i + batch]) == y[i:i + batch]).sum())
        return correct / len(y)

    def save(self, path, extra_metadata: dict | None = None) -> None:
        meta = dict(self.metadata)
        if extra_metadata:
            meta.update(extra_metadata)
        params = [p for _, p in self.network.parameters()]
        persist.save_model(path, "perception", self.network.spec(), params, meta)

    @classmethod
    def load(cls, path) -> "PerceptionModel":
        kind, arch, params, sidecar = persist.load_model(path)
        if kind != "perception":
            raise persist.ModelFormatError(f"{path}: expected a perception model, got {kind!r}")
        network = numerics.build_network(arch["layers"], arch["input_shape"])
        for (_, dst), src in zip(network.parameters(), params):
            dst[...] = src
        return cls(network, sidecar or {})


def train_classifier(dataset, epochs: int, lr: float, rng_seed: int,
                     batch_size: int = 64, l2: float = 1e-4):
    """Minibatch SGD on multiclass hinge loss; returns (model, epoch accuracies)."""
    X, y = dataset
    if len(y) == 0:
        raise ValueError("dataset is empty")
    if set(np.unique(y)) != {CIRCLE, CROSS, NOTHING}:
        raise ValueError("dataset must contain all three labels")
    if X.ndim == 3:
        X = X[..., None]
    rng = np.random.default_rng(rng_seed)
    network = numerics.build_network(PERCEPTION_ARCH, PERCEPTION_INPUT_SHAPE, rng)
    head = network.layers[-1]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(y))
        correct = 0
        for i in range(0, len(y), batch_size):
            idx = order[i:i + batch_size]
            xb, yb = X[idx], y[idx]
            scores = network.forward(xb)[-1]
            loss, d_scores = numerics.multiclass_hinge(scores, yb)
            loss += 0.5 * l2 * float((head.W ** 2).sum())
            if not np.isfinite(loss):
                raise numerics.NumericsError(
                    f"training diverged (loss={loss}) at epoch {epoch}")
            correct += int((np.argmax(scores, axis=1) == yb).sum())
            network.backward(d_scores)
            head.gW += l2 * head.W
            network.sgd_step(lr)
        history.append(correct / len(y))
        logger.debug("epoch %d train accuracy %.4f", epoch, history[-1])
    metadata = {"seed": rng_seed, "dataset_size": len(y), "epochs": epochs,
                "learning_rate": lr, "batch_size": batch_size,
                "final_train_accuracy": history[-1]}
    return PerceptionModel(network, metadata), history


# ---------------------------------------------------------------------------
# grid frames


def split_grid(frame: np.ndarray):
    """Nine 40x40 cells of a 120x120 frame, row-major."""
    frame = np.asarray(frame)
    if frame.shape != (GRID, GRID):
        raise ValueError(f"grid frame must be {GRID}x{GRID}, got {frame.shape}")
    cells = []
    for i in range(9):
        r, c = divmod(i, 3)
        cells.append(frame[r * CELL:(r + 1) * CELL, c * CELL:(c + 1) * CELL].copy())
    return cells


def assemble_grid(cells) -> np.ndarray:
    if len(cells) != 9:
        raise ValueError("need exactly 9 cells")
    rows = [np.hstack(cells[r * 3:(r + 1) * 3]) for r in range(3)]
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# debounce


class DebounceState:
    """Per-cell sliding window of classifications and the committed labels.

    A cell commits the first time its last `window` classifications agree on
    a symbol; committed cells never change and never re-emit.
    """

    def __init__(self, window: int = 3, user_symbol_name: str = "cross"):
        self.window = window
        self.user_symbol_name = user_symbol_name
        self.recent = [deque(maxlen=window) for _ in range(9)]
        self.committed = [NOTHING] * 9

    def push(self, cell: int, label: int) -> bool:
        """Record a classification; True when this push commits the cell."""
        ring = self.recent[cell]
        ring.append(label)
        if self.committed[cell] != NOTHING:
            return False
        if label == NOTHING or len(ring) < self.window:
            return False
        if all(seen == label for seen in ring):
            self.committed[cell] = label
            return True
        return False

    def commit_external(self, cell: int, label: int) -> None:
        """Mark a cell taken outside perception (the agent's own move)."""
        if self.committed[cell] == NOTHING:
            self.committed[cell] = label


def observe(state: DebounceState, frame: np.ndarray, model: PerceptionModel):
    """One polling tick: classify all 9 cells, commit any 3-in-a-row symbol.

    Emitted events carry who=usr and the symbol inferred from who opened the
    game; a disagreeing classifier label is logged and overridden.
    """
    events = []
    for i, cell_img in enumerate(split_grid(frame)):
        label, _ = model.classify(cell_img)
        if state.push(i, label):
            if LABEL_NAMES[label] != state.user_symbol_name:
                logger.warning("cell %d classified as %s but the user draws %s",
                               i, LABEL_NAMES[label], state.user_symbol_name)
            events.append(GameMoveEvent(who="usr", where=LOCATIONS[i],
                                        symbol=state.user_symbol_name))
    return state, events


# ---------------------------------------------------------------------------
# corpus export


def write_pgm(path, img: np.ndarray) -> None:
    data = np.clip(np.asarray(img) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def export_image_corpus(items, directory) -> None:
    """Write labeled cell images as PGM files plus a filename,label manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        for i, (img, label) in enumerate(items):
            name = f"img_{i:05d}_{LABEL_NAMES[label]}.pgm"
            write_pgm(directory / name, img)
            writer.writerow([name, LABEL_NAMES[label]])
