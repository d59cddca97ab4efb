"""Training loops, named presets and the learning-rate range test."""

from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .detector import BinaryNet, save_m1
from .distill import DistillConfig, StudentNet, TeacherNet, distillation_loss
from .errors import DivergedImmediately, EmptySplit, NonFiniteLoss
from .evaluation import compute_metrics
from .identifier import Identifier, save_m2, select_representative_frame
from .labels import ACTION_LABELS, ChunkLabel
from .prefetch import ChildClassifier, save_child_classifier
from .preprocess import StoredChunk, list_chunks, load_chunk

log = logging.getLogger(__name__)

LOSSES = ("binary-cross-entropy", "categorical-cross-entropy")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-2
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    loss: str = "binary-cross-entropy"
    balanced: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be non-negative")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")


@dataclass
class Preset:
    train: TrainConfig
    distill: DistillConfig | None = None

    def to_dict(self) -> dict:
        d = {"train": asdict(self.train)}
        if self.distill is not None:
            d["distill"] = asdict(self.distill)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Preset":
        return cls(
            TrainConfig(**d["train"]),
            DistillConfig(**d["distill"]) if d.get("distill") is not None else None,
        )


PRESETS: dict[str, Preset] = {
    "prefetch-paper": Preset(TrainConfig(300, 64, 3.82e-2, 0.0, 1e-5, loss="binary-cross-entropy")),
    "m1-paper": Preset(TrainConfig(240, 128, 2.31e-3, 0.3, 1e-5, loss="binary-cross-entropy", balanced=True)),
    "m2-paper": Preset(TrainConfig(300, 64, 8.29e-1, 0.0, 8.29e-5, loss="categorical-cross-entropy")),
    # There are no reference optimiser settings for the student; these follow the identifier preset's
    # batch size with a learning rate suited to its much larger head.
    "distill-paper": Preset(
        TrainConfig(100, 64, 1e-2, 0.9, 1e-5, loss="categorical-cross-entropy"), DistillConfig()
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def save_preset(preset: Preset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(preset.to_dict(), indent=2), encoding="utf-8")


def load_preset(path: str | Path) -> Preset:
    return Preset.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def make_optimizer(params: Iterable[torch.Tensor], cfg: TrainConfig) -> torch.optim.SGD:
    return torch.optim.SGD(
        list(params), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )


def seeded(seed: int, factory: Callable[[], nn.Module]) -> nn.Module:
    """Build a model with its random initialisation tied to ``seed``."""
    torch.manual_seed(seed)
    return factory()


# --- learning-rate range test ------------------------------------------------


@dataclass
class LRRangeResult:
    lrs: list[float]
    losses: list[float]
    smoothed: list[float]
    suggestion: float


def lr_range_test(
    model: nn.Module,
    batches: Iterable[tuple[torch.Tensor, torch.Tensor]],
    loss_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    lr_min: float = 1e-6,
    lr_max: float = 10.0,
    steps: int = 100,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    smoothing: float = 0.9,
    diverge_factor: float = 4.0,
) -> LRRangeResult:
    """Exponential learning-rate sweep; suggests the rate where the smoothed loss falls fastest.

    One SGD step is taken per rate. The sweep stops early once the smoothed
    loss exceeds ``diverge_factor`` times its best value. The model's weights
    are restored afterwards.
    """
    if not 0 < lr_min < lr_max:
        raise ValueError("need 0 < lr_min < lr_max")
    if steps < 10:
        raise ValueError("steps must be >= 10")
    saved = copy.deepcopy(model.state_dict())
    opt = torch.optim.SGD(
        [p for p in model.parameters() if p.requires_grad], lr=lr_min, momentum=momentum,
        weight_decay=weight_decay,
    )
    gamma = (lr_max / lr_min) ** (1.0 / (steps - 1))
    lrs, losses, smoothed = [], [], []
    avg, best = 0.0, math.inf
    model.train()
    try:
        for i, (x, y) in zip(range(steps), itertools.cycle(batches)):
            lr = lr_min * gamma**i
            for g in opt.param_groups:
                g["lr"] = lr
            loss = loss_fn(model(x), y)
            value = float(loss.detach())
            if not math.isfinite(value):
                if i == 0:
                    raise DivergedImmediately(f"loss is {value} at lr={lr_min:g}")
                break
            avg = smoothing * avg + (1 - smoothing) * value
            s = avg / (1 - smoothing ** (i + 1))
            lrs.append(lr)
            losses.append(value)
            smoothed.append(s)
            if s > diverge_factor * best:
                break
            best = min(best, s)
            opt.zero_grad()
            loss.backward()
            opt.step()
    finally:
        model.load_state_dict(saved)

    if len(smoothed) < 3:
        suggestion = lrs[0]
    else:
        slope = np.gradient(np.asarray(smoothed), np.log10(np.asarray(lrs)))
        suggestion = lrs[int(np.argmin(slope))]
    return LRRangeResult(lrs, losses, smoothed, float(min(max(suggestion, lr_min), lr_max)))


# --- datasets ----------------------------------------------------------------


class ChunkDataset:
    """Labelled chunks held in memory or read lazily from a chunk store."""

    def __init__(
        self,
        chunks: Sequence[np.ndarray | Path],
        labels: Sequence[ChunkLabel],
        keypoints: Sequence[np.ndarray] | None = None,
    ):
        if len(chunks) != len(labels) or (keypoints is not None and len(keypoints) != len(chunks)):
            raise ValueError("chunks, labels and keypoints must align")
        self._chunks = list(chunks)
        self.labels = [ChunkLabel.parse(l) for l in labels]
        self._keypoints = list(keypoints) if keypoints is not None else None

    @classmethod
    def from_store(cls, directory: str | Path, video_ids: set[str] | None = None) -> "ChunkDataset":
        paths = list_chunks(directory, video_ids)
        labels = []
        for p in paths:
            label = json.loads(p.with_suffix(".json").read_text(encoding="utf-8"))["label"]
            if label is None:
                raise EmptySplit(f"{p} has no label; re-run preprocessing with annotations")
            labels.append(label)
        return cls(paths, labels)

    def __len__(self) -> int:
        return len(self._chunks)

    def _load(self, i: int) -> StoredChunk | None:
        item = self._chunks[i]
        return load_chunk(item) if isinstance(item, (str, Path)) else None

    def chunk(self, i: int) -> torch.Tensor:
        stored = self._load(i)
        data = stored.chunk.data if stored is not None else self._chunks[i]
        return torch.as_tensor(np.asarray(data, dtype=np.float32))

    def origin(self, i: int) -> tuple[str, int] | None:
        """``(video_id, start_frame)`` for store-backed chunks, else ``None``."""
        item = self._chunks[i]
        if not isinstance(item, (str, Path)):
            return None
        meta = json.loads(Path(item).with_suffix(".json").read_text(encoding="utf-8"))
        return meta["video_id"], int(meta["start_frame"])

    def m1_chunk(self, i: int) -> torch.Tensor:
        """The detector's view: prefetch-cropped frames when the store has them."""
        stored = self._load(i)
        if stored is not None and stored.cropped is not None:
            return torch.as_tensor(stored.cropped)
        return self.chunk(i)

    def keypoints(self, i: int) -> torch.Tensor:
        if self._keypoints is not None:
            return torch.as_tensor(np.asarray(self._keypoints[i], dtype=np.float32))
        stored = self._load(i)
        if stored is None or stored.keypoints is None:
            raise EmptySplit(f"chunk {i} has no keypoints")
        return torch.as_tensor(stored.keypoints.coords)

    def subset(self, keep: Sequence[int]) -> "ChunkDataset":
        return ChunkDataset(
            [self._chunks[i] for i in keep],
            [self.labels[i] for i in keep],
            [self._keypoints[i] for i in keep] if self._keypoints is not None else None,
        )

    def actions_only(self) -> "ChunkDataset":
        return self.subset([i for i, l in enumerate(self.labels) if l.is_action])


def load_child_adult_folder(root: str | Path, input_size: int = 224) -> tuple[torch.Tensor, torch.Tensor]:
    """Images under ``root/child`` and ``root/adult`` -> ``(N, 3, s, s)`` in [0, 1] and child targets."""
    images, targets = [], []
    for name, target in (("child", 1.0), ("adult", 0.0)):
        folder = Path(root) / name
        files = sorted(p for p in folder.glob("*") if p.suffix.lower() in {".jpg", ".jpeg", ".png", ".bmp"})
        for p in files:
            img = cv2.imread(str(p), cv2.IMREAD_COLOR)
            if img is None:
                log.warning("skipping unreadable image %s", p)
                continue
            img = cv2.resize(img, (input_size, input_size), interpolation=cv2.INTER_AREA)
            images.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB).transpose(2, 0, 1) / 255.0)
            targets.append(target)
    if not images:
        raise EmptySplit(f"no images under {root}/child or {root}/adult")
    return torch.tensor(np.stack(images), dtype=torch.float32), torch.tensor(targets)


# --- generic loop ------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    final_checkpoint: Path | None = None
    best_checkpoint: Path | None = None


def _epoch_batches(n: int, batch_size: int, gen: torch.Generator, weights: torch.Tensor | None):
    if weights is None:
        order = torch.randperm(n, generator=gen)
    else:
        order = torch.multinomial(weights, n, replacement=True, generator=gen)
    batches = list(order.split(batch_size))
    # Batch-norm heads cannot train on a single sample.
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = torch.cat(batches[-2:])
        batches.pop()
    return batches


def _class_balance_weights(targets: torch.Tensor) -> torch.Tensor:
    classes, counts = torch.unique(targets, return_counts=True)
    per_class = {int(c): 1.0 / int(k) for c, k in zip(classes, counts)}
    return torch.tensor([per_class[int(t)] for t in targets], dtype=torch.float64)


def _hard_loss(cfg: TrainConfig):
    if cfg.loss == "binary-cross-entropy":
        return lambda out, y: F.binary_cross_entropy_with_logits(out, y.float()), lambda out, y: (out >= 0) == (y > 0.5)
    return lambda out, y: F.cross_entropy(out, y.long()), lambda out, y: out.argmax(1) == y


def _write_history(run_dir: Path, history: list[dict]) -> None:
    keys = list(dict.fromkeys(k for row in history for k in row))
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)


def _fit(
    model: nn.Module,
    n: int,
    make_batch: Callable[[torch.Tensor], tuple[tuple, torch.Tensor]],
    forward: Callable[..., torch.Tensor],
    cfg: TrainConfig,
    *,
    loss_fn=None,
    weights: torch.Tensor | None = None,
    evaluate: Callable[[], dict] | None = None,
    run_dir: str | Path | None = None,
    save: Callable[[Path, dict], None] | None = None,
    extra_config: dict | None = None,
) -> TrainResult:
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    hard_loss, correct_fn = _hard_loss(cfg)
    loss_fn = loss_fn or (lambda out, y, idx: hard_loss(out, y))
    params = [p for p in model.parameters() if p.requires_grad]
    opt = make_optimizer(params, cfg)
    result = TrainResult()
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        snapshot = {"train": asdict(cfg), **(extra_config or {})}
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2), encoding="utf-8")
    best_f1 = -math.inf

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        total, hits, seen = 0.0, 0, 0
        for b, idx in enumerate(_epoch_batches(n, cfg.batch_size, gen, weights)):
            inputs, target = make_batch(idx)
            out = forward(*inputs)
            loss = loss_fn(out, target, idx)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise NonFiniteLoss(epoch, b, value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(idx)
            hits += int(correct_fn(out.detach(), target).sum())
            seen += len(idx)
        row = {"epoch": epoch, "train_loss": total / seen, "train_accuracy": hits / seen}
        if evaluate is not None:
            model.eval()
            row.update(evaluate())
        result.history.append(row)
        if run_dir is not None:
            _write_history(run_dir, result.history)
            if save is not None and "val_f1" in row and row["val_f1"] > best_f1:
                best_f1 = row["val_f1"]
                result.best_checkpoint = run_dir / "best.pt"
                save(result.best_checkpoint, {"epoch": epoch, **row})
        log.info("epoch %d: %s", epoch, row)

    if run_dir is not None and save is not None:
        result.final_checkpoint = run_dir / "final.pt"
        save(result.final_checkpoint, {"epoch": cfg.epochs, **result.history[-1]})
    return result


def _require_classes(labels: Sequence, needed: Iterable, what: str) -> None:
    missing = [str(c) for c in needed if c not in set(labels)]
    if missing:
        raise EmptySplit(f"{what}: no training samples for {missing}")


# --- concrete trainers -------------------------------------------------------


def fit_m1(
    model: BinaryNet,
    train: ChunkDataset,
    cfg: TrainConfig,
    val: ChunkDataset | None = None,
    run_dir: str | Path | None = None,
) -> TrainResult:
    if len(train) == 0:
        raise EmptySplit("detector training set is empty")
    targets = torch.tensor([float(l.is_action) for l in train.labels])
    _require_classes([bool(t) for t in targets.tolist()], (False, True), "detector")

    def make_batch(idx):
        return (torch.stack([train.m1_chunk(int(i)) for i in idx]),), targets[idx]

    def evaluate():
        probs = predict_m1(model, val)
        report = compute_metrics([bool(p >= 0.5) for p in probs], [l.is_action for l in val.labels], "binary")
        return {"val_f1": report.f1, "val_accuracy": report.accuracy}

    meta = {"train_config": asdict(cfg)}
    return _fit(
        model, len(train), make_batch, model, cfg,
        weights=_class_balance_weights(targets) if cfg.balanced else None,
        evaluate=evaluate if val is not None and len(val) else None,
        run_dir=run_dir,
        save=lambda path, info: save_m1(model, path, {**meta, **info}),
        extra_config={"model": asdict(model.config)},
    )


@torch.no_grad()
def predict_m1(model: BinaryNet, data: ChunkDataset, batch_size: int = 8) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(data), batch_size):
        x = torch.stack([data.m1_chunk(i) for i in range(start, min(start + batch_size, len(data)))])
        out.append(torch.sigmoid(model(x)).numpy())
    return np.concatenate(out) if out else np.empty(0)


@torch.no_grad()
def identifier_inputs(model: Identifier, data: ChunkDataset, batch_size: int = 16) -> tuple[torch.Tensor, torch.Tensor]:
    """Frozen-trunk embeddings of each chunk's representative frame, plus flattened keypoints."""
    embs, kps = [], []
    for start in range(0, len(data), batch_size):
        idx = range(start, min(start + batch_size, len(data)))
        kp = torch.stack([data.keypoints(i) for i in idx])
        frames = torch.stack(
            [data.chunk(i)[select_representative_frame(k.numpy())] for i, k in zip(idx, kp)]
        )
        embs.append(model.embed_frames(frames))
        kps.append(kp.flatten(2))
    return torch.cat(embs), torch.cat(kps)


@torch.no_grad()
def predict_m2(model: Identifier, data: ChunkDataset) -> np.ndarray:
    if len(data) == 0:
        return np.empty((0, len(ACTION_LABELS)))
    model.eval()
    emb, kp = identifier_inputs(model, data)
    return torch.softmax(model.logits_from_embedding(emb, kp).double(), dim=1).numpy()


def fit_m2(
    model: Identifier,
    train: ChunkDataset,
    cfg: TrainConfig,
    val: ChunkDataset | None = None,
    run_dir: str | Path | None = None,
) -> TrainResult:
    """Train the recurrent layers and head; no-class chunks in ``train`` are skipped."""
    train = train.actions_only()
    if len(train) == 0:
        raise EmptySplit("identifier training set has no action chunks")
    _require_classes(train.labels, ACTION_LABELS, "identifier")
    emb, kp = identifier_inputs(model, train)
    targets = torch.tensor([l.action_index for l in train.labels])
    val = val.actions_only() if val is not None else None
    val_inputs = identifier_inputs(model, val) if val is not None and len(val) else None

    def evaluate():
        with torch.no_grad():
            pred = model.logits_from_embedding(*val_inputs).argmax(1).tolist()
        report = compute_metrics([ACTION_LABELS[p] for p in pred], val.labels, "multiclass")
        return {"val_f1": report.f1, "val_accuracy": report.accuracy}

    meta = {"train_config": asdict(cfg)}
    return _fit(
        model, len(train), lambda idx: ((emb[idx], kp[idx]), targets[idx]),
        model.logits_from_embedding, cfg,
        weights=_class_balance_weights(targets) if cfg.balanced else None,
        evaluate=evaluate if val_inputs is not None else None,
        run_dir=run_dir,
        save=lambda path, info: save_m2(model, path, {**meta, **info}),
        extra_config={"model": asdict(model.config), "backbone": model.backbone_meta},
    )


def fit_prefetch_head(
    classifier: ChildClassifier,
    images: torch.Tensor,
    is_child: torch.Tensor,
    cfg: TrainConfig,
    val: tuple[torch.Tensor, torch.Tensor] | None = None,
    run_dir: str | Path | None = None,
) -> TrainResult:
    """Train the child/adult head on cached backbone outputs."""
    if len(images) == 0:
        raise EmptySplit("child/adult training set is empty")
    _require_classes([bool(t) for t in is_child.tolist()], (False, True), "child classifier")

    def embed(x):
        return torch.cat([classifier.embed(x[i : i + 32]) for i in range(0, len(x), 32)])

    feats = embed(images)
    val_feats = (embed(val[0]), val[1]) if val is not None else None

    def evaluate():
        with torch.no_grad():
            pred = (classifier.head(val_feats[0]).squeeze(-1) >= 0).tolist()
        report = compute_metrics(pred, [bool(t) for t in val_feats[1].tolist()], "binary")
        return {"val_f1": report.f1, "val_accuracy": report.accuracy}

    def save(path, info):
        save_child_classifier(classifier, path, {"train_config": asdict(cfg), **info})

    return _fit(
        classifier, len(feats), lambda idx: ((feats[idx],), is_child[idx]),
        lambda f: classifier.head(f).squeeze(-1), cfg,
        evaluate=evaluate if val_feats is not None else None,
        run_dir=run_dir, save=save,
    )


@torch.no_grad()
def _frame_features(encode: Callable, data: ChunkDataset, batch_size: int = 4) -> torch.Tensor:
    out = []
    for start in range(0, len(data), batch_size):
        out.append(encode(torch.stack([data.chunk(i) for i in range(start, min(start + batch_size, len(data)))])))
    return torch.cat(out)


def fit_teacher(
    teacher: TeacherNet, train: ChunkDataset, cfg: TrainConfig, run_dir: str | Path | None = None
) -> TrainResult:
    train = train.actions_only()
    _require_classes(train.labels, ACTION_LABELS, "teacher")
    trunk = _frame_features(teacher.encoder.trunk_features, train)
    targets = torch.tensor([l.action_index for l in train.labels])
    return _fit(
        teacher, len(train), lambda idx: ((trunk[idx],), targets[idx]), teacher.forward_trunk, cfg,
        run_dir=run_dir,
        save=lambda path, info: torch.save({"kind": "teacher", "state_dict": teacher.state_dict(), "metadata": info}, path),
    )


def fit_student(
    student: StudentNet,
    teacher: TeacherNet,
    train: ChunkDataset,
    cfg: TrainConfig,
    distill: DistillConfig = DistillConfig(),
    run_dir: str | Path | None = None,
) -> TrainResult:
    """Train the student on hard labels plus the frozen teacher's softened outputs."""
    train = train.actions_only()
    _require_classes(train.labels, ACTION_LABELS, "student")
    teacher.eval()
    with torch.no_grad():
        teacher_logits = teacher.forward_trunk(_frame_features(teacher.encoder.trunk_features, train))
    feats = _frame_features(student.encode, train)
    targets = torch.tensor([l.action_index for l in train.labels])
    return _fit(
        student, len(train), lambda idx: ((feats[idx],), targets[idx]), student.forward_features, cfg,
        loss_fn=lambda out, y, idx: distillation_loss(out, teacher_logits[idx], y, distill),
        run_dir=run_dir,
        save=lambda path, info: torch.save({"kind": "student", "state_dict": student.state_dict(), "metadata": info}, path),
        extra_config={"distill": asdict(distill)},
    )
