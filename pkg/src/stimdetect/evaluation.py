"""Metrics, the no-class threshold sweep, FPS benchmarking and the ablation table.

F1 convention: the detector uses binary F1 of the positive (action) class;
the identifier and the full pipeline use macro F1 over the three action
classes, with no-class kept in the confusion matrix but not averaged.
"""

from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .errors import ComponentNotLoaded, EmptyInput, LengthMismatch
from .identifier import apply_noclass_threshold
from .labels import ACTION_LABELS, ALL_LABELS, ChunkLabel

WARMUP_BATCHES = 3


@dataclass
class MetricsReport:
    f1: float
    accuracy: float
    confusion: np.ndarray  # rows = truth, columns = prediction
    labels: tuple
    support: dict = field(default_factory=dict)
    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        name = lambda lab: lab.value if isinstance(lab, ChunkLabel) else str(lab)  # noqa: E731
        return {
            "f1": self.f1,
            "accuracy": self.accuracy,
            "labels": [name(l) for l in self.labels],
            "confusion": self.confusion.tolist(),
            "support": {name(k): v for k, v in self.support.items()},
            "precision": {name(k): v for k, v in self.precision.items()},
            "recall": {name(k): v for k, v in self.recall.items()},
        }


def _confusion(pred: Sequence, truth: Sequence, labels: Sequence) -> np.ndarray:
    index = {lab: i for i, lab in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(cm, (np.array([index[t] for t in truth]), np.array([index[p] for p in pred])), 1)
    return cm


def _prf(cm: np.ndarray, i: int) -> tuple[float, float, float]:
    tp = cm[i, i]
    pred_pos = cm[:, i].sum()
    true_pos = cm[i, :].sum()
    precision = tp / pred_pos if pred_pos else 0.0
    recall = tp / true_pos if true_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(precision), float(recall), float(f1)


def compute_metrics(predictions: Sequence, truth: Sequence, mode: str | None = None) -> MetricsReport:
    """Accuracy, F1 and confusion matrix.

    ``mode="binary"`` expects booleans (positive = action); ``mode="multiclass"``
    expects ``ChunkLabel`` values. Left as ``None`` the mode follows the input type.
    """
    if len(predictions) != len(truth):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truth)} labels")
    if len(truth) == 0:
        raise EmptyInput("no labels to score")
    if mode is None:
        mode = "binary" if all(isinstance(v, (bool, np.bool_)) for v in [*predictions, *truth]) else "multiclass"

    if mode == "binary":
        labels = (False, True)
        cm = _confusion([bool(p) for p in predictions], [bool(t) for t in truth], labels)
        p, r, f1 = _prf(cm, 1)
        per_class = {True: (p, r)}
    elif mode == "multiclass":
        labels = ALL_LABELS
        cm = _confusion([ChunkLabel.parse(p) for p in predictions], [ChunkLabel.parse(t) for t in truth], labels)
        scores = {lab: _prf(cm, labels.index(lab)) for lab in ACTION_LABELS}
        f1 = float(np.mean([s[2] for s in scores.values()]))
        per_class = {lab: s[:2] for lab, s in scores.items()}
    else:
        raise ValueError(f"unknown mode {mode!r}")

    return MetricsReport(
        f1=float(f1),
        accuracy=float(np.trace(cm) / cm.sum()),
        confusion=cm,
        labels=labels,
        support={lab: int(cm[i].sum()) for i, lab in enumerate(labels)},
        precision={k: v[0] for k, v in per_class.items()},
        recall={k: v[1] for k, v in per_class.items()},
    )


@dataclass
class FpsReport:
    component: str
    fps: float
    n_chunks: int
    frames_per_chunk: int
    elapsed_s: float
    hardware: str
    exclusive: bool = True
    note: str = "run with no concurrent load; figures are hardware-specific"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def hardware_descriptor() -> str:
    cpu = platform.processor() or platform.machine()
    return f"{platform.system()} {cpu}, {os.cpu_count()} cpu, torch {torch.__version__}, {torch.get_num_threads()} threads"


def benchmark_fps(
    component: Callable | None,
    chunks: Sequence,
    name: str = "component",
    warmup: int = WARMUP_BATCHES,
    frame_count: Callable[[object], int] = len,
) -> FpsReport:
    """Time ``component(chunk)`` over ``chunks``; the first ``warmup`` calls are not counted.

    Warm-up calls reuse the leading chunks; FPS is frames processed per
    wall-clock second over the timed calls only. ``frame_count`` says how
    many frames one item holds, for components whose inputs are tuples.
    """
    if component is None:
        raise ComponentNotLoaded(f"{name} is not loaded")
    if len(chunks) == 0:
        raise EmptyInput("need at least one chunk to benchmark")
    with torch.inference_mode():
        for i in range(warmup):
            component(chunks[i % len(chunks)])
        frames = 0
        start = time.perf_counter()
        for c in chunks:
            component(c)
            frames += frame_count(c)
        elapsed = time.perf_counter() - start
    return FpsReport(
        component=name,
        fps=frames / elapsed,
        n_chunks=len(chunks),
        frames_per_chunk=frame_count(chunks[0]),
        elapsed_s=elapsed,
        hardware=hardware_descriptor(),
    )


@dataclass
class DeltaSweep:
    rows: list[dict]
    best_delta: float

    def to_dict(self) -> dict:
        return {"rows": self.rows, "best_delta": self.best_delta}


def sweep_delta(probs, truth: Sequence, deltas: Sequence[float]) -> DeltaSweep:
    """Re-threshold cached identifier probabilities for each delta; no model is run."""
    probs = np.asarray(probs, dtype=np.float64)
    truth = [ChunkLabel.parse(t) for t in truth]
    if len(probs) != len(truth):
        raise LengthMismatch(f"{len(probs)} probability rows for {len(truth)} labels")
    rows = []
    for d in deltas:
        pred = [apply_noclass_threshold(p, d) for p in probs]
        report = compute_metrics(pred, truth, mode="multiclass")
        rows.append(
            {
                "delta": float(d),
                "f1": report.f1,
                "accuracy": report.accuracy,
                "noclass_count": sum(p is ChunkLabel.NO_CLASS for p in pred),
                "action_recall": _action_recall(pred, truth),
            }
        )
    best = max(rows, key=lambda r: (r["f1"], -r["delta"]))["delta"] if rows else float("nan")
    return DeltaSweep(rows, best)


def _action_recall(pred: Sequence[ChunkLabel], truth: Sequence[ChunkLabel]) -> float:
    hits = sum(p == t for p, t in zip(pred, truth) if t.is_action)
    n = sum(t.is_action for t in truth)
    return hits / n if n else 0.0


def delta_grid(n: int = 20, upper: float = 0.7) -> list[float]:
    """``n`` evenly spaced deltas in ``[0, upper]``; past 0.67 every chunk becomes no-class."""
    return [float(v) for v in np.linspace(0.0, upper, n)]


def run_ablation(
    predictors: Mapping[str, Callable[[], Sequence[ChunkLabel]]], truth: Sequence[ChunkLabel]
) -> list[dict]:
    """One row per variant (e.g. all frames vs a single representative frame)."""
    rows = []
    for name, predict in predictors.items():
        report = compute_metrics(list(predict()), list(truth), mode="multiclass")
        rows.append({"ablation": name, "f1": report.f1, "accuracy": report.accuracy})
    return rows
