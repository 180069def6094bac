"""Mini-batch training of the dense classifier and the curriculum driver.

Each iteration processes a batch of depth frames (default 8) with one step
of gradient descent plus momentum on mean per-pixel cross entropy over all
pixels, background included and with no class balancing. The curriculum
driver runs stages in order, fine-tuning the same weights, and logs average
per-class validation accuracy at stage boundaries (plus periodic probes).

Batches are streamed from the MVDS containers: frame indices are shuffled
per epoch by the seeded generator, so training is deterministic given
(seed, schedule).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dataset import DatasetReader
from . import FcnClassifier, PerClassAccuracy, classify
from .fcn import FcnModel
from .preprocess import preprocess, warp_labels
from .layers import softmax_cross_entropy


class NonFiniteLoss(RuntimeError):
    """Training diverged; reduce the learning rate."""


@dataclass(frozen=True)
class CurriculumStage:
    dataset: str        # stage id, key into the datasets mapping
    iterations: int
    learning_rate: float
    batch_size: int = 8

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iteration budget must be positive")


@dataclass(frozen=True)
class LogRow:
    stage: str
    iteration: int      # global iteration count at measurement time
    split: str
    accuracy: float


class SgdMomentum:
    def __init__(self, model: FcnModel, momentum: float = 0.9):
        self.model = model
        self.momentum = momentum
        self._velocity = {name: np.zeros_like(value)
                          for name, value, _ in model.parameters()}

    def step(self, batch_levels: np.ndarray, batch_labels: np.ndarray,
             lr: float) -> float:
        """One descent step; returns the batch loss."""
        model = self.model
        model.zero_grads()
        logits = model.forward(model.embed(batch_levels), train=True)
        loss, dlogits = softmax_cross_entropy(logits, batch_labels)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss = {loss}")
        if lr == 0.0:
            return loss
        model.backward(dlogits)
        for name, value, grad in model.parameters():
            v = self._velocity[name]
            v *= self.momentum
            v -= lr * grad
            value += v
        return loss


class _FrameStream:
    """Shuffled (sample, camera) frame batches out of an MVDS container."""

    def __init__(self, reader: DatasetReader, rng: np.random.Generator,
                 window: int):
        self.reader = reader
        self.rng = rng
        self.window = window
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0
        self._n_frames = reader.num_samples * reader.n_cameras

    def _next_index(self) -> int:
        if self._pos >= len(self._order):
            self._order = self.rng.permutation(self._n_frames)
            self._pos = 0
        idx = int(self._order[self._pos])
        self._pos += 1
        return idx

    def next_batch(self, batch_size: int):
        levels = np.empty((batch_size, self.window, self.window), dtype=np.uint8)
        labels = np.empty_like(levels)
        filled = 0
        while filled < batch_size:
            idx = self._next_index()
            depth, gt = self.reader.frame(idx // self.reader.n_cameras,
                                          idx % self.reader.n_cameras)
            if not (depth != 255).any():
                continue  # boneless frame (character fully out of view)
            window, record = preprocess(depth, self.window)
            levels[filled] = window
            labels[filled] = warp_labels(record, gt)
            filled += 1
        return levels, labels


def evaluate_accuracy(model: FcnModel, reader: DatasetReader,
                      max_samples: int | None = 64) -> float:
    """Average per-class accuracy of the model over a validation container,
    measured in original frame coordinates."""
    clf = FcnClassifier(model)
    acc = PerClassAccuracy(reader.n_labels)
    n = reader.num_samples if max_samples is None else min(reader.num_samples,
                                                           max_samples)
    for i in range(n):
        for cam in range(reader.n_cameras):
            depth, gt = reader.frame(i, cam)
            if not (depth != 255).any():
                continue
            pmap = classify(clf, depth)
            acc.update(pmap.argmax(axis=2), gt)
    return acc.value()


def train_curriculum(schedule: list[CurriculumStage], datasets: dict,
                     model: FcnModel, seed: int, eval_samples: int = 48,
                     probes_per_stage: int = 2,
                     progress=None) -> tuple[FcnModel, list[LogRow]]:
    """Run the curriculum stages in order on one model.

    ``datasets`` maps stage ids to (train container path, validation
    container path). The accuracy log gets a start and end measurement per
    stage on that stage's validation split, plus evenly spaced probes.
    """
    if not schedule:
        raise ValueError("empty curriculum schedule")
    missing = [s.dataset for s in schedule if s.dataset not in datasets]
    if missing:
        raise KeyError(f"no datasets for stages {missing}")

    rng = np.random.default_rng(seed)
    optimizer = SgdMomentum(model)
    log: list[LogRow] = []
    global_iter = 0
    for stage in schedule:
        train_path, val_path = datasets[stage.dataset]
        with DatasetReader(train_path) as train_reader, \
                DatasetReader(val_path) as val_reader:
            stream = _FrameStream(train_reader, rng, model.config.window)
            acc = evaluate_accuracy(model, val_reader, eval_samples)
            log.append(LogRow(stage.dataset, global_iter, "validation", acc))
            probe_every = None
            if probes_per_stage > 0:
                probe_every = max(1, stage.iterations // (probes_per_stage + 1))
            for it in range(1, stage.iterations + 1):
                levels, labels = stream.next_batch(stage.batch_size)
                loss = optimizer.step(levels, labels, stage.learning_rate)
                global_iter += 1
                if progress is not None:
                    progress(stage.dataset, global_iter, loss)
                if (probe_every and it % probe_every == 0
                        and it < stage.iterations):
                    acc = evaluate_accuracy(model, val_reader, eval_samples)
                    log.append(LogRow(stage.dataset, global_iter, "validation", acc))
            acc = evaluate_accuracy(model, val_reader, eval_samples)
            log.append(LogRow(stage.dataset, global_iter, "validation", acc))
    return model, log


def write_accuracy_log(path, rows: list[LogRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "iteration", "split", "accuracy"])
        for row in rows:
            writer.writerow([row.stage, row.iteration, row.split,
                             f"{row.accuracy:.6f}"])


def read_accuracy_log(path) -> list[LogRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(LogRow(rec["stage"], int(rec["iteration"]),
                               rec["split"], float(rec["accuracy"])))
    return rows


def parse_schedule(spec: str) -> list[CurriculumStage]:
    """Parse 'easy:400:0.1[:8],inter:400:0.05' into curriculum stages."""
    stages = []
    for part in spec.split(","):
        fields = part.strip().split(":")
        if len(fields) not in (3, 4):
            raise ValueError(f"bad schedule entry {part!r}; want "
                             "stage:iterations:lr[:batch]")
        batch = int(fields[3]) if len(fields) == 4 else 8
        stages.append(CurriculumStage(fields[0], int(fields[1]),
                                      float(fields[2]), batch))
    return stages
