"""Curriculum-staged multi-task training, batch concat/split, online data transfer
and the independent model-cascade baseline."""
from __future__ import annotations

import csv
import logging
import math
import queue
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .backbone import ModelCascade, OMNet
from .errors import EmptyDatasetError, OMNetError
from .sampler import (
    CORE_CLASSES,
    COMPLETE_CLASSES,
    TRANSFER_THRESHOLDS,
    Case,
    PatchSpec,
    extract,
    remap_labels,
    sample_patches,
    transfer_predicate,
)
from .tensor import Tensor

log = logging.getLogger(__name__)

FULL_PATCH_COUNTS = (400_000, 400_000, 200_000)


@dataclass
class CurriculumSchedule:
    stage_epochs: tuple[int, int, int] = (1, 1, 18)
    lr0: float = 1e-3
    halving_period: int = 4
    momentum: float = 0.99
    batch_per_task: int = 20
    patches_per_epoch: tuple[int, int, int] = FULL_PATCH_COUNTS
    desk_scale: float = 1.0
    curriculum: bool = True
    transfer: bool = True
    plateau_tol: float | None = None
    check_transfers: bool = False

    def __post_init__(self):
        self.stage_epochs = tuple(int(e) for e in self.stage_epochs)
        self.patches_per_epoch = tuple(int(c) for c in self.patches_per_epoch)
        if len(self.stage_epochs) != 3 or min(self.stage_epochs) < 0 or sum(self.stage_epochs) == 0:
            raise ValueError(f"stage_epochs must be three non-negative ints, got {self.stage_epochs}")

    @property
    def total_epochs(self) -> int:
        return sum(self.stage_epochs)

    def lr(self, epoch: int) -> float:
        return self.lr0 / 2 ** (epoch // self.halving_period)

    def epoch_counts(self) -> tuple[int, int, int]:
        return tuple(max(1, round(c * self.desk_scale)) for c in self.patches_per_epoch)

    def steps_per_epoch(self) -> int:
        return max(1, math.ceil(self.epoch_counts()[0] / self.batch_per_task))

    def active_tasks(self, epoch: int) -> tuple[int, ...]:
        """Tasks trained in ``epoch`` under the fixed stage boundaries."""
        if not self.curriculum:
            return (1, 2, 3)
        bounds = np.cumsum(self.stage_epochs)
        stage = int(np.searchsorted(bounds, epoch, side="right")) + 1
        return tuple(range(1, min(stage, 3) + 1))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CurriculumSchedule":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})

    @classmethod
    def desk(cls, **overrides) -> "CurriculumSchedule":
        """CPU-sized schedule: (1, 1, 6) epochs of 320/320/160 patches, batch 8.

        A few hundred steps at 1e-3 leave the heads near their initial flat
        output, so the rate goes up. Momentum drops to 0.9 at the same time:
        at 0.99 the effective step lr/(1 - mu) is large enough to kill most
        backbone ReLUs.
        """
        values = dict(stage_epochs=(1, 1, 6), lr0=3e-2, momentum=0.9, batch_per_task=8, desk_scale=8e-4)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "CurriculumSchedule":
        """Schedules for the ``curriculum``, ``om-net0`` and ``om-netd`` training modes."""
        flags = {"curriculum": dict(curriculum=True, transfer=True),
                 "om-net0": dict(curriculum=False, transfer=False),
                 "om-netd": dict(curriculum=False, transfer=True)}
        if mode not in flags:
            raise ValueError(f"unknown training mode {mode!r}")
        return cls(**{**kw, **flags[mode]})


@dataclass
class BatchPlan:
    tasks: tuple[int, ...]
    counts: tuple[int, ...]
    offsets: tuple[int, ...]
    # target task -> [(source task, index within source slice)]
    transfers: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def span(self, task: int) -> tuple[int, int]:
        i = self.tasks.index(task)
        return self.offsets[i], self.offsets[i] + self.counts[i]


def assemble_batch(per_task: dict[int, tuple[np.ndarray, np.ndarray]], transfer: bool = True):
    """Concatenate per-task patches along the batch axis.

    ``per_task`` maps task -> (images [n,W,H,L,4], labels [n,W,H,L] in 5-class
    codes). Returns ``(plan, images, labels)`` where ``labels`` stays per task.
    Patches of easier tasks that pass the transfer predicate are listed in
    ``plan.transfers`` for the harder active tasks.
    """
    tasks = tuple(sorted(per_task))
    counts = tuple(len(per_task[t][0]) for t in tasks)
    offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(counts)[:-1]]))
    transfers: dict[int, list[tuple[int, int]]] = {}
    if transfer:
        for target in (2, 3):
            if target not in per_task:
                continue
            moved = [(src, i) for src in tasks if src < target
                     for i, lab in enumerate(per_task[src][1]) if transfer_predicate(lab, target)]
            if moved:
                transfers[target] = moved
    plan = BatchPlan(tasks, counts, offsets, transfers)
    images = np.concatenate([per_task[t][0] for t in tasks], axis=0)
    labels = {t: per_task[t][1] for t in tasks}
    return plan, images, labels


def split_features(features: Tensor, plan: BatchPlan) -> dict[int, Tensor]:
    """Inverse of the concatenation: slice features back into per-task parts."""
    if features.shape[0] != plan.total:
        raise OMNetError(f"batch of {features.shape[0]} does not match plan total {plan.total}")
    return {t: T.batch_slice(features, *plan.span(t)) for t in plan.tasks}


def task_inputs(parts: dict[int, Tensor], labels: dict[int, np.ndarray], plan: BatchPlan,
                task: int) -> tuple[Tensor, np.ndarray]:
    """Features and remapped labels entering ``task``'s loss, transfers appended."""
    feats, labs = [parts[task]], [labels[task]]
    by_source: dict[int, list[int]] = {}
    for src, i in plan.transfers.get(task, []):
        by_source.setdefault(src, []).append(i)
    for src in sorted(by_source):
        idx = by_source[src]
        feats.append(T.take(parts[src], idx))
        labs.append(labels[src][idx])
    return T.concat(feats, axis=0), remap_labels(np.concatenate(labs, axis=0), task)


def _brute_force_fraction(labels: np.ndarray, classes: Sequence[int]) -> float:
    hits = 0
    flat = labels.reshape(-1).tolist()
    for v in flat:
        if v in classes:
            hits += 1
    return hits / len(flat)


def verify_transfers(plan: BatchPlan, labels: dict[int, np.ndarray]) -> None:
    """Re-check every planned transfer with a plain voxel count."""
    for target, moved in plan.transfers.items():
        classes = COMPLETE_CLASSES if target == 2 else CORE_CLASSES
        thr = float(TRANSFER_THRESHOLDS[target])
        for src, i in moved:
            frac = _brute_force_fraction(labels[src][i], classes)
            if frac < thr - 1e-12:
                raise OMNetError(f"transfer {src}->{target} patch {i} has fraction {frac:.4f} < {thr}")


# --------------------------------------------------------------------------
# data streams


class PatchPool:
    """Per-epoch pool of patch specs for one task, drawn across cases."""

    def __init__(self, cases: Sequence[Case], task: int, extents, rng: np.random.Generator):
        self.cases = cases
        self.task = task
        self.extents = tuple(extents)
        self.rng = rng
        self._pool: list[PatchSpec] = []
        self._cursor = 0
        self.eligible = [i for i, c in enumerate(cases)
                         if c.labels is not None and (task == 1 or np.any(np.isin(c.labels, CORE_CLASSES if task == 3
                                                                                 else COMPLETE_CLASSES)))]
        if not self.eligible:
            raise EmptyDatasetError(f"no case provides training patches for task {task}")

    def refill(self, count: int) -> None:
        picks = self.rng.choice(self.eligible, size=count)
        specs: list[PatchSpec] = []
        for ci in sorted(set(picks.tolist())):
            n = int((picks == ci).sum())
            specs.extend(sample_patches(self.cases[ci], self.task, n, self.rng, self.extents, case_index=ci))
        order = self.rng.permutation(len(specs))
        self._pool = [specs[i] for i in order]
        self._cursor = 0

    def next(self, n: int) -> list[PatchSpec]:
        out = []
        while len(out) < n:
            if self._cursor >= len(self._pool):
                self.refill(max(n, len(self._pool)))
            take = min(n - len(out), len(self._pool) - self._cursor)
            out.extend(self._pool[self._cursor:self._cursor + take])
            self._cursor += take
        return out

    def load(self, specs: Sequence[PatchSpec]) -> tuple[np.ndarray, np.ndarray]:
        images = np.stack([extract(self.cases[s.case].intensities, s) for s in specs])
        labels = np.stack([extract(self.cases[s.case].labels, s) for s in specs]).astype(np.int64)
        return images, labels


def _prefetch(gen: Iterator, depth: int) -> Iterator:
    """Run ``gen`` in one producer thread ahead of the consumer (bounded queue)."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()

    def produce():
        try:
            for item in gen:
                q.put(item)
        except BaseException as exc:  # surfaced in the consumer thread
            q.put(exc)
        q.put(done)

    threading.Thread(target=produce, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item


@dataclass
class TraceRow:
    step: int
    epoch: int
    stage: int
    losses: dict[int, float]
    lr: float


@dataclass
class TrainResult:
    model: object
    trace: list[TraceRow]

    def write_csv(self, path) -> None:
        write_trace_csv(self.trace, path)


def write_trace_csv(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "epoch", "stage", "loss_task1", "loss_task2", "loss_task3", "lr"])
        for r in trace:
            w.writerow([r.step, r.epoch, r.stage]
                       + [f"{r.losses[t]:.6f}" if t in r.losses else "" for t in (1, 2, 3)]
                       + [f"{r.lr:.8g}"])


def _epoch_mean(trace: Sequence[TraceRow], epoch: int, task: int) -> float:
    vals = [r.losses[task] for r in trace if r.epoch == epoch and task in r.losses]
    return float(np.mean(vals)) if vals else float("nan")


def train_step(model: OMNet, plan: BatchPlan, images: np.ndarray, labels: dict[int, np.ndarray],
               optimizer: T.SGD) -> dict[int, float]:
    """One optimisation step on a concatenated batch; returns per-task losses."""
    feats = model.features(Tensor(images))
    parts = split_features(feats, plan)
    losses: dict[int, Tensor] = {}
    for task in plan.tasks:
        f, lab = task_inputs(parts, labels, plan, task)
        losses[task] = T.softmax_with_loss(model.task_logits(task, f), lab)
    total = losses[plan.tasks[0]]
    for task in plan.tasks[1:]:
        total = T.add(total, losses[task])
    optimizer.zero_grad()
    T.backward(total)
    optimizer.step()
    return {t: l.item() for t, l in losses.items()}


def train_curriculum(model: OMNet, cases: Sequence[Case], schedule: CurriculumSchedule, seed: int = 0,
                     prefetch: int = 0, callback: Callable[[TraceRow], None] | None = None) -> TrainResult:
    """Train OM-Net with stage-wise task introduction and online data transfer.

    Stage ``k`` optimises the summed losses of tasks ``1..k``. With
    ``schedule.curriculum`` off, all three tasks train from the first epoch
    (with or without transfer, per ``schedule.transfer``).
    """
    if not cases:
        raise EmptyDatasetError("no training cases")
    rng = np.random.default_rng(seed)
    extents = model.config.patch
    pools = {t: PatchPool(cases, t, extents, np.random.default_rng(rng.integers(2 ** 63))) for t in (1, 2, 3)}
    counts = schedule.epoch_counts()
    steps = schedule.steps_per_epoch()
    optimizer = T.SGD(model.parameters(), schedule.lr(0), schedule.momentum, model.lr_scales())

    def epoch_batches(active):
        for t in active:
            pools[t].refill(counts[t - 1])
        for _ in range(steps):
            per_task = {t: pools[t].load(pools[t].next(schedule.batch_per_task)) for t in active}
            yield assemble_batch(per_task, transfer=schedule.transfer)

    trace: list[TraceRow] = []
    stage = 1 if schedule.curriculum else 3
    in_stage = 0
    step = 0
    for epoch in range(schedule.total_epochs):
        active = tuple(range(1, stage + 1))
        optimizer.lr = schedule.lr(epoch)
        batches = epoch_batches(active)
        if prefetch > 0:
            batches = _prefetch(batches, prefetch)
        for plan, images, labels in batches:
            if schedule.check_transfers:
                verify_transfers(plan, labels)
            losses = train_step(model, plan, images, labels, optimizer)
            row = TraceRow(step, epoch, stage, losses, optimizer.lr)
            trace.append(row)
            if callback:
                callback(row)
            step += 1
        log.info("epoch %d stage %d: %s", epoch, stage,
                 {t: round(_epoch_mean(trace, epoch, t), 4) for t in active})
        in_stage += 1
        if stage < 3 and schedule.curriculum:
            advance = in_stage >= schedule.stage_epochs[stage - 1]
            if not advance and schedule.plateau_tol is not None and in_stage >= 2:
                prev, cur = _epoch_mean(trace, epoch - 1, stage), _epoch_mean(trace, epoch, stage)
                advance = abs(prev - cur) <= schedule.plateau_tol * abs(prev)
            if advance:
                stage += 1
                in_stage = 0
                # zero-epoch stages are skipped outright
                while stage < 3 and schedule.stage_epochs[stage - 1] == 0:
                    stage += 1
    return TrainResult(model, trace)


def train_mc_baseline(cascade: ModelCascade, cases: Sequence[Case], schedule: CurriculumSchedule,
                      seed: int = 0, callback: Callable[[TraceRow], None] | None = None) -> TrainResult:
    """Train each cascade member alone on its own task for the full epoch budget."""
    if not cases:
        raise EmptyDatasetError("no training cases")
    trace: list[TraceRow] = []
    step = 0
    counts = schedule.epoch_counts()
    for net in cascade.nets:
        task = net.task
        rng = np.random.default_rng([seed, task])
        pool = PatchPool(cases, task, net.config.patch, rng)
        optimizer = T.SGD(net.parameters(), schedule.lr(0), schedule.momentum, net.lr_scales())
        steps = max(1, math.ceil(counts[task - 1] / schedule.batch_per_task))
        for epoch in range(schedule.total_epochs):
            optimizer.lr = schedule.lr(epoch)
            pool.refill(counts[task - 1])
            for _ in range(steps):
                images, labels = pool.load(pool.next(schedule.batch_per_task))
                loss = T.softmax_with_loss(net(Tensor(images)), remap_labels(labels, task))
                optimizer.zero_grad()
                T.backward(loss)
                optimizer.step()
                row = TraceRow(step, epoch, task, {task: loss.item()}, optimizer.lr)
                trace.append(row)
                if callback:
                    callback(row)
                step += 1
    return TrainResult(cascade, trace)
