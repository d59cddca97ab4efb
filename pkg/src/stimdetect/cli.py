"""``stimdetect`` command line.

Every subcommand prints a report (text by default, ``--json`` for JSON) and
also writes it to ``<out>/report.json`` when ``--out`` is given. Failures
print a JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter, defaultdict
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import __version__
from .adapters import FasterRCNNPersonDetector, KeypointRCNNPoseEstimator, load_factory
from .annotations import DatasetManifest, build_manifest, frame_labels_from_intervals, load_annotation_dir
from .backbones import count_parameters
from .detector import BinaryNet, M1Config, load_m1, m1_forward
from .distill import build_teacher_student
from .errors import EmptySplit, StimDetectError
from .evaluation import benchmark_fps, compute_metrics, delta_grid, sweep_delta
from .identifier import Identifier, M2Config, apply_noclass_threshold, load_m2, m2_forward
from .labels import ACTION_LABELS, ChunkLabel
from .pipeline import Pipeline, PipelineConfig, window_chunks, write_jsonl, to_jsonl
from .prefetch import ChildClassifier, load_child_classifier, prefetch_chunk
from .preprocess import DEFAULT_STRIDE, NUM_JOINTS, TARGET_FPS, VideoChunk, preprocess_video, save_chunk
from .synthetic import BlobPersonDetector, BlobPoseEstimator, blob_dataset
from .training import (
    ChunkDataset,
    fit_m1,
    fit_m2,
    fit_prefetch_head,
    fit_student,
    fit_teacher,
    get_preset,
    identifier_inputs,
    load_child_adult_folder,
    load_preset,
    lr_range_test,
    predict_m1,
    predict_m2,
    seeded,
)

log = logging.getLogger("stimdetect")

VIDEO_SUFFIXES = (".mp4", ".avi", ".mkv", ".mov", ".webm", ".mpg", ".mpeg")

# Reference figures for the footprint audit.
REFERENCE_LEARNABLE = {
    "prefetch_head": 273_474,
    "m1": 38_265,
    "m2": 6_783,
    "teacher": 23_836_579,
    "student": 8_911_107,
}


# --- plug-in resolution ------------------------------------------------------


def make_pose_estimator(name: str | None):
    if name in (None, "none"):
        return None
    if name == "blob":
        return BlobPoseEstimator()
    if name == "keypointrcnn":
        return KeypointRCNNPoseEstimator()
    return load_factory(name)


def make_person_detector(name: str | None):
    if name in (None, "none"):
        return None
    if name == "blob":
        return BlobPersonDetector()
    if name == "fasterrcnn":
        return FasterRCNNPersonDetector()
    return load_factory(name)


def find_videos(directory: Path, video_ids) -> dict[str, Path]:
    """Map each id to ``<directory>/<id>.<video suffix>``; ids without a file are left out."""
    found = {}
    for vid in video_ids:
        for suffix in VIDEO_SUFFIXES:
            p = directory / f"{vid}{suffix}"
            if p.exists():
                found[vid] = p
                break
    return found


# --- shared helpers ----------------------------------------------------------


def _out_dir(args) -> Path:
    if args.out is None:
        raise ValueError(f"{args.command} needs --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args) -> DatasetManifest:
    if args.manifest is None:
        raise ValueError(f"{args.command} needs --manifest")
    return DatasetManifest.load(args.manifest)


def _chunk_dir(args) -> Path:
    if args.chunks is not None:
        return Path(args.chunks)
    if args.manifest is None:
        raise ValueError("give --chunks or --manifest")
    return Path(args.manifest).parent / "chunks"


def _split_dataset(args, split: str) -> ChunkDataset:
    directory = _chunk_dir(args)
    ids = {e.video_id for e in _manifest(args).split(split)} if args.manifest else None
    return ChunkDataset.from_store(directory, ids)


def _train_config(args, default_preset: str):
    preset = load_preset(args.config) if args.config else get_preset(args.preset or default_preset)
    overrides = {
        k: v
        for k, v in {
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "learning_rate": args.lr,
            "seed": args.seed,
        }.items()
        if v is not None
    }
    return replace(preset, train=replace(preset.train, **overrides))


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "delta", None) is not None:
        cfg = replace(cfg, noclass_delta=args.delta)
    if getattr(args, "no_prefetch", False):
        cfg = replace(cfg, use_prefetch=False)
    if getattr(args, "smoothing", False):
        cfg = replace(cfg, smoothing=True)
    return cfg


def _seed(args) -> int:
    return args.seed if args.seed is not None else 0


class _PackedHead(nn.Module):
    """Identifier head over ``cat(embedding, keypoints)`` so the LR range test can drive it."""

    def __init__(self, model: Identifier, embed_dim: int):
        super().__init__()
        self.model = model
        self.embed_dim = embed_dim

    def forward(self, packed):
        emb, kp = packed[:, : self.embed_dim], packed[:, self.embed_dim :]
        return self.model.logits_from_embedding(emb, kp.view(len(kp), -1, 2 * NUM_JOINTS))


def _batches(n: int, batch_size: int, seed: int):
    order = torch.randperm(n, generator=torch.Generator().manual_seed(seed))
    return [b for b in order.split(batch_size) if len(b) > 1]


# --- subcommands -------------------------------------------------------------


def cmd_preprocess(args) -> dict:
    out = _out_dir(args)
    records = load_annotation_dir(args.annotations)
    paths = find_videos(Path(args.videos), [r.video_id for r in records])
    manifest = build_manifest(records, paths, args.test_fraction, _seed(args))
    manifest_path = Path(args.manifest) if args.manifest else out / "manifest.json"
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(manifest_path)

    estimator = make_pose_estimator(args.pose)
    detector = make_person_detector(args.detector)
    classifier = load_child_classifier(args.prefetch)[0] if args.prefetch else None
    chunk_dir = manifest_path.parent / "chunks"
    counts: Counter = Counter()
    for entry in manifest.entries:
        labels = frame_labels_from_intervals(entry.annotation, TARGET_FPS)
        for chunk, kp in preprocess_video(entry.path, labels, estimator, args.stride):
            cropped = prefetch_chunk(chunk, detector, classifier)[0].data if detector else None
            save_chunk(chunk_dir, entry.video_id, chunk, kp, cropped)
            counts[chunk.label.value] += 1
    return {
        "manifest": str(manifest_path),
        "chunks_dir": str(chunk_dir),
        "videos": len(manifest),
        "train_videos": len(manifest.split("train")),
        "test_videos": len(manifest.split("test")),
        "chunks": sum(counts.values()),
        "chunk_labels": dict(sorted(counts.items())),
    }


def cmd_train_m1(args) -> dict:
    out = _out_dir(args)
    preset = _train_config(args, "m1-paper")
    train = _split_dataset(args, "train")
    val = _split_dataset(args, "test") if args.manifest else None
    model = seeded(preset.train.seed, lambda: BinaryNet(M1Config()))
    cfg = preset.train
    report = {}
    if args.lr_find:
        targets = torch.tensor([float(l.is_action) for l in train.labels])
        batches = [
            (torch.stack([train.m1_chunk(int(i)) for i in b]), targets[b])
            for b in _batches(len(train), cfg.batch_size, cfg.seed)
        ]
        lr = lr_range_test(model, batches, F.binary_cross_entropy_with_logits, steps=args.lr_steps,
                           momentum=cfg.momentum, weight_decay=cfg.weight_decay)
        cfg = replace(cfg, learning_rate=lr.suggestion)
        report["lr_suggestion"] = lr.suggestion
    result = fit_m1(model, train, cfg, val, out)
    return {**report, **_train_report(result, cfg)}


def cmd_train_m2(args) -> dict:
    out = _out_dir(args)
    preset = _train_config(args, "m2-paper")
    train = _split_dataset(args, "train")
    val = _split_dataset(args, "test") if args.manifest else None
    m2cfg = M2Config(pretrained=args.pretrained, weights_path=args.backbone_weights)
    if args.delta is not None:
        m2cfg = replace(m2cfg, noclass_delta=args.delta)
    model = seeded(preset.train.seed, lambda: Identifier(m2cfg))
    cfg = preset.train
    report = {}
    if args.lr_find:
        actions = train.actions_only()
        emb, kp = identifier_inputs(model, actions)
        packed = torch.cat([emb, kp.flatten(1)], 1)
        targets = torch.tensor([l.action_index for l in actions.labels])
        batches = [(packed[b], targets[b]) for b in _batches(len(actions), cfg.batch_size, cfg.seed)]
        lr = lr_range_test(_PackedHead(model, emb.shape[1]), batches, F.cross_entropy, steps=args.lr_steps,
                           momentum=cfg.momentum, weight_decay=cfg.weight_decay)
        cfg = replace(cfg, learning_rate=lr.suggestion)
        report["lr_suggestion"] = lr.suggestion
    result = fit_m2(model, train, cfg, val, out)
    return {**report, **_train_report(result, cfg)}


def cmd_train_prefetch(args) -> dict:
    out = _out_dir(args)
    preset = _train_config(args, "prefetch-paper")
    classifier = seeded(
        preset.train.seed, lambda: ChildClassifier(pretrained=args.pretrained, weights_path=args.backbone_weights)
    )
    images, targets = load_child_adult_folder(args.images, classifier.input_size)
    val = load_child_adult_folder(args.val_images, classifier.input_size) if args.val_images else None
    result = fit_prefetch_head(classifier, images, targets, preset.train, val, out)
    return _train_report(result, preset.train)


def cmd_distill(args) -> dict:
    out = _out_dir(args)
    preset = _train_config(args, "distill-paper")
    train = _split_dataset(args, "train")
    torch.manual_seed(preset.train.seed)
    teacher, student, footprints = build_teacher_student(args.pretrained, args.backbone_weights)
    t_res = fit_teacher(teacher, train, preset.train, out / "teacher")
    s_res = fit_student(student, teacher, train, preset.train, preset.distill, out / "student")
    report = {
        "footprints": {k: asdict(v) for k, v in footprints.items()},
        "learnable_ratio": footprints["student"].learnable_weights / footprints["teacher"].learnable_weights,
        "teacher": _train_report(t_res, preset.train),
        "student": _train_report(s_res, preset.train),
    }
    if args.manifest:
        test = _split_dataset(args, "test").actions_only()
        if len(test):
            report["test"] = {
                name: _score_sequence_model(model, test) for name, model in (("teacher", teacher), ("student", student))
            }
    return report


@torch.no_grad()
def _score_sequence_model(model: nn.Module, data: ChunkDataset) -> dict:
    model.eval()
    pred = [ACTION_LABELS[int(model(data.chunk(i).unsqueeze(0)).argmax())] for i in range(len(data))]
    r = compute_metrics(pred, data.labels, "multiclass")
    return {"f1": r.f1, "accuracy": r.accuracy}


def _train_report(result, cfg) -> dict:
    return {
        "config": asdict(cfg),
        "epochs": len(result.history),
        "last": result.history[-1] if result.history else None,
        "final_checkpoint": str(result.final_checkpoint) if result.final_checkpoint else None,
        "best_checkpoint": str(result.best_checkpoint) if result.best_checkpoint else None,
    }


def _build_pipeline(args, cfg: PipelineConfig) -> Pipeline:
    m1 = load_m1(args.m1)[0]
    m2 = load_m2(args.m2)[0]
    estimator = make_pose_estimator(args.pose)
    if estimator is None:
        raise ValueError("inference needs a pose estimator")
    detector = make_person_detector(args.detector) if cfg.use_prefetch else None
    classifier = load_child_classifier(args.prefetch)[0] if args.prefetch and cfg.use_prefetch else None
    return Pipeline(m1, m2, estimator, cfg, detector, classifier)


def cmd_infer(args) -> dict:
    cfg = _pipeline_config(args)
    pipe = _build_pipeline(args, cfg)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    videos = {}
    for path in map(Path, args.videos):
        results = pipe.run(path)
        if out is not None:
            write_jsonl(results, path.stem, out / f"{path.stem}.jsonl")
        else:
            sys.stdout.write(to_jsonl(results, path.stem))
        videos[path.stem] = {
            "chunks": len(results),
            "labels": dict(Counter(r.label.value for r in results)),
        }
    return {"config": asdict(cfg), "videos": videos, "m2_calls": pipe.m2_calls}


def _grouped_windows(data: ChunkDataset, decisions: list[bool], window: int) -> set[int]:
    """Apply the windowing rule within each video, in chunk order."""
    by_video = defaultdict(list)
    for i in range(len(data)):
        origin = data.origin(i) or ("", i)
        by_video[origin[0]].append((origin[1], i))
    routed = set()
    for items in by_video.values():
        items.sort()
        idx = [i for _, i in items]
        routed.update(idx[k] for k in window_chunks([decisions[i] for i in idx], window))
    return routed


def cmd_evaluate(args) -> dict:
    cfg = _pipeline_config(args)
    data = _split_dataset(args, args.split)
    if len(data) == 0:
        raise EmptySplit(f"no chunks in the {args.split} split")
    m1, m2 = load_m1(args.m1)[0], load_m2(args.m2)[0]
    truth = data.labels
    m1_probs = predict_m1(m1, data)
    decisions = [bool(p >= 0.5) for p in m1_probs]
    report = {"split": args.split, "chunks": len(data), "noclass_delta": cfg.noclass_delta}
    report["m1"] = compute_metrics(decisions, [t.is_action for t in truth], "binary").to_dict()

    probs = predict_m2(m2, data)
    m2_pred = [apply_noclass_threshold(p, cfg.noclass_delta) for p in probs]
    actions = [i for i, t in enumerate(truth) if t.is_action]
    positives = [i for i in actions if decisions[i]]
    # Which chunks the identifier figure is measured on is ambiguous, so report both.
    for name, idx in (("m2_all_action_chunks", actions), ("m2_m1_positive_chunks", positives)):
        report[name] = (
            compute_metrics([m2_pred[i] for i in idx], [truth[i] for i in idx], "multiclass").to_dict()
            if idx else None
        )

    routed = _grouped_windows(data, decisions, cfg.window_size)
    pipeline_pred = [m2_pred[i] if i in routed else ChunkLabel.NO_CLASS for i in range(len(data))]
    report["pipeline"] = compute_metrics(pipeline_pred, truth, "multiclass").to_dict()
    report["m2_calls"] = len(routed)
    if args.out:
        out = _out_dir(args)
        np.savez(out / "cached_probs.npz", probs=probs, truth=np.array([t.value for t in truth]))
    return report


def cmd_sweep_delta(args) -> dict:
    if args.probs:
        with np.load(args.probs) as z:
            probs, truth = z["probs"], [ChunkLabel.parse(t) for t in z["truth"]]
    else:
        if args.m2 is None:
            raise ValueError("give --probs or --m2")
        data = _split_dataset(args, args.split)
        probs, truth = predict_m2(load_m2(args.m2)[0], data), data.labels
    sweep = sweep_delta(probs, truth, delta_grid(args.points, args.upper))
    return sweep.to_dict()


def cmd_benchmark(args) -> dict:
    n = args.n
    if args.chunks or args.manifest:
        data = _split_dataset(args, args.split)
        idx = torch.randperm(len(data), generator=torch.Generator().manual_seed(_seed(args)))[:n].tolist()
        chunks = [data.chunk(i).numpy() for i in idx]
        kps = [data.keypoints(i).numpy() for i in idx] if args.m2 else None
    else:
        # Synthetic chunks: timings only, the content does not matter.
        chunks = list(blob_dataset(n, _seed(args))[0])
        kps = [np.full((len(c), NUM_JOINTS, 2), 0.5, dtype=np.float32) for c in chunks]
    reports = []
    if args.m1:
        m1 = load_m1(args.m1)[0]
        reports.append(benchmark_fps(lambda c: m1_forward(m1, c), chunks, "m1"))
    if args.m2:
        m2 = load_m2(args.m2)[0]
        pairs = list(zip(chunks, kps))
        reports.append(benchmark_fps(lambda ck: m2_forward(m2, *ck), pairs, "m2", frame_count=lambda ck: len(ck[0])))
    if args.detector:
        detector = make_person_detector(args.detector)
        classifier = load_child_classifier(args.prefetch)[0] if args.prefetch else None
        reports.append(
            benchmark_fps(lambda c: prefetch_chunk(VideoChunk(c, 0), detector, classifier), chunks, "prefetch")
        )
    if not reports:
        raise ValueError("nothing to benchmark; give --m1, --m2 or --detector")
    return {"reports": [r.to_dict() for r in reports]}




def footprint_report() -> dict:
    """Weight counts of every model under its default configuration."""
    teacher, student, fp = build_teacher_student()
    counts = {
        "prefetch_head": count_parameters(ChildClassifier()),
        "m1": count_parameters(BinaryNet(M1Config())),
        "m2": count_parameters(Identifier(M2Config())),
        "teacher": (fp["teacher"].total_weights, fp["teacher"].learnable_weights),
        "student": (fp["student"].total_weights, fp["student"].learnable_weights),
    }
    rows = {}
    for name, (total, learnable) in counts.items():
        ref = REFERENCE_LEARNABLE[name]
        rows[name] = {
            "total_weights": total,
            "learnable_weights": learnable,
            "reference_learnable": ref,
            "relative_difference": (learnable - ref) / ref,
        }
    ratio = counts["student"][1] / counts["teacher"][1]
    return {"models": rows, "student_teacher_ratio": ratio, "reference_ratio": 0.3738}


def cmd_footprint(args) -> dict:
    return footprint_report()


# --- output ------------------------------------------------------------------


def render_text(report, indent: int = 0) -> str:
    pad = "  " * indent
    lines = []
    if isinstance(report, dict):
        for k, v in report.items():
            if isinstance(v, (dict, list)) and v and not _is_flat_list(v):
                lines.append(f"{pad}{k}:")
                lines.append(render_text(v, indent + 1))
            else:
                lines.append(f"{pad}{k}: {_fmt(v)}")
    elif isinstance(report, list):
        for item in report:
            if isinstance(item, dict) and all(not isinstance(v, (dict, list)) for v in item.values()):
                lines.append(pad + "  ".join(f"{k}={_fmt(v)}" for k, v in item.items()))
            else:
                lines.append(f"{pad}-")
                lines.append(render_text(item, indent + 1))
    else:
        lines.append(pad + _fmt(report))
    return "\n".join(lines)


def _is_flat_list(v) -> bool:
    return isinstance(v, list) and all(isinstance(x, (int, float, str)) for x in v)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="preset JSON (train commands) or pipeline config JSON (infer/evaluate)")
    common.add_argument("--seed", type=int, help="overrides the preset or split seed")
    common.add_argument("--manifest", help="dataset manifest JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--json", action="store_true", help="print the report as JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stimdetect", description="Stimming behaviour detection in video.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=fn)
        return p

    def chunks_arg(p):
        p.add_argument("--chunks", help="chunk store directory (default: <manifest dir>/chunks)")

    def train_args(p):
        chunks_arg(p)
        p.add_argument("--preset", help="named preset")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)

    def backbone_args(p):
        p.add_argument("--pretrained", action="store_true", help="use torchvision's ImageNet weights")
        p.add_argument("--backbone-weights", help="local backbone state dict")

    def lr_args(p):
        p.add_argument("--lr-find", action="store_true", help="run the LR range test and train at its suggestion")
        p.add_argument("--lr-steps", type=int, default=100)

    def model_args(p, m2_required=True):
        p.add_argument("--m1", required=True, help="detector checkpoint")
        p.add_argument("--m2", required=m2_required, help="identifier checkpoint")
        p.add_argument("--delta", type=float, help="no-class margin")

    p = add("preprocess", cmd_preprocess, "parse annotations, split videos, write chunks")
    p.add_argument("--annotations", required=True, help="directory of annotation XML files")
    p.add_argument("--videos", required=True, help="directory holding <video_id>.<ext>")
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    p.add_argument("--pose", default="blob", help="blob | keypointrcnn | none | module:factory")
    p.add_argument("--detector", help="store prefetch crops too: blob | fasterrcnn | module:factory")
    p.add_argument("--prefetch", help="child-classifier checkpoint used with --detector")

    p = add("train-prefetch", cmd_train_prefetch, "train the child/adult head")
    train_args(p)
    backbone_args(p)
    p.add_argument("--images", required=True, help="directory with child/ and adult/ image folders")
    p.add_argument("--val-images")

    p = add("train-m1", cmd_train_m1, "train the binary detector")
    train_args(p)
    lr_args(p)

    p = add("train-m2", cmd_train_m2, "train the action identifier")
    train_args(p)
    backbone_args(p)
    lr_args(p)
    p.add_argument("--delta", type=float, help="no-class margin stored with the model")

    p = add("distill", cmd_distill, "train the teacher, then distil it into the student")
    train_args(p)
    backbone_args(p)

    p = add("infer", cmd_infer, "run the full pipeline on videos and write JSONL")
    model_args(p)
    p.add_argument("videos", nargs="+")
    p.add_argument("--pose", default="blob", help="blob | keypointrcnn | module:factory")
    p.add_argument("--detector", default="blob", help="blob | fasterrcnn | module:factory")
    p.add_argument("--prefetch", help="child-classifier checkpoint")
    p.add_argument("--no-prefetch", action="store_true", help="feed uncropped chunks to the detector")
    p.add_argument("--smoothing", action="store_true")

    p = add("evaluate", cmd_evaluate, "score the detector, identifier and pipeline on a split")
    chunks_arg(p)
    model_args(p)
    p.add_argument("--split", default="test")

    p = add("sweep-delta", cmd_sweep_delta, "re-threshold cached identifier outputs over a delta grid")
    chunks_arg(p)
    p.add_argument("--m2")
    p.add_argument("--probs", help="cached_probs.npz from evaluate")
    p.add_argument("--split", default="test")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--upper", type=float, default=0.7)

    p = add("benchmark", cmd_benchmark, "frames-per-second of loaded components")
    chunks_arg(p)
    p.add_argument("--m1")
    p.add_argument("--m2")
    p.add_argument("--detector")
    p.add_argument("--prefetch")
    p.add_argument("--n", type=int, default=75, help="number of chunks")
    p.add_argument("--split", default="test")

    add("footprint", cmd_footprint, "weight counts of every model")
    return parser


def _error_record(exc: Exception) -> dict:
    if isinstance(exc, StimDetectError):
        return exc.to_record()
    code = {FileNotFoundError: "file_not_found", KeyError: "invalid_argument", ValueError: "invalid_argument"}
    name = next((v for k, v in code.items() if isinstance(exc, k)), "io_error" if isinstance(exc, OSError) else "error")
    return {"error": name, "message": str(exc)}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        report = args.func(args)
    except (StimDetectError, ValueError, KeyError, OSError) as exc:
        log.debug("command failed", exc_info=True)
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 1
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, default=str), encoding="utf-8")
    stream = sys.stderr if args.command == "infer" and not args.out else sys.stdout
    print(json.dumps(report, indent=2, default=str) if args.json else render_text(report), file=stream)
    return 0


if __name__ == "__main__":
    sys.exit(main())
