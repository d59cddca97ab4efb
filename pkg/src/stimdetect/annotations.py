"""SSBD-style XML annotations: parsing, per-frame labels and the train/test manifest.

A document looks like::

    <video id="v_ArmFlapping_01">
      <url>http://www.youtube.com/watch?v=...</url>
      <duration>47s</duration>
      <behaviours count="1" id="b_set">
        <behaviour id="b1">
          <time>0002:0009</time>
          <bodypart>hand</bodypart>
          <category>armflapping</category>
          <intensity>high</intensity>
          <modality>video</modality>
        </behaviour>
      </behaviours>
    </video>

``<time>`` holds ``start:end``. A bare four-digit token is ``MMSS`` (the SSBD
convention, so ``0102`` is 62 s); a token with a decimal point or an ``s``
suffix is plain seconds. Elements outside this set (``height``, ``frames``,
``persons``, ...) are tolerated and ignored. The formal schema ships as
``schema/annotation.xsd``.
"""

from __future__ import annotations

import json
import math
import random
import re
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import IntervalOutOfRange, MalformedXml, MissingVideoFile, SchemaViolation
from .labels import ChunkLabel

SCHEMA_PATH = Path(__file__).with_name("schema") / "annotation.xsd"

_MMSS = re.compile(r"^\d{4}$")


@dataclass(frozen=True)
class BehaviourInterval:
    start_time: float
    end_time: float
    category: ChunkLabel
    intensity: str | None = None
    modality: str | None = None
    bodypart: str | None = None

    def __post_init__(self):
        if self.start_time < 0:
            raise SchemaViolation(f"negative start time {self.start_time}")
        if not self.end_time > self.start_time:
            raise SchemaViolation(
                f"interval end {self.end_time} is not after start {self.start_time}"
            )
        if not self.category.is_action:
            raise SchemaViolation("behaviour category must be an action, not no-class")

    def to_dict(self) -> dict:
        return {
            "start_time": self.start_time,
            "end_time": self.end_time,
            "category": self.category.value,
            "intensity": self.intensity,
            "modality": self.modality,
            "bodypart": self.bodypart,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BehaviourInterval":
        return cls(
            start_time=float(d["start_time"]),
            end_time=float(d["end_time"]),
            category=ChunkLabel.parse(d["category"]),
            intensity=d.get("intensity"),
            modality=d.get("modality"),
            bodypart=d.get("bodypart"),
        )


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    duration: float
    behaviours: tuple[BehaviourInterval, ...] = ()
    url: str | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise SchemaViolation(f"duration must be positive, got {self.duration}")
        for b in self.behaviours:
            if b.end_time > self.duration:
                raise IntervalOutOfRange(
                    f"{self.video_id}: interval ends at {b.end_time}s "
                    f"but the video lasts {self.duration}s"
                )

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "url": self.url,
            "duration": self.duration,
            "behaviours": [b.to_dict() for b in self.behaviours],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnnotationRecord":
        return cls(
            video_id=d["video_id"],
            url=d.get("url"),
            duration=float(d["duration"]),
            behaviours=tuple(BehaviourInterval.from_dict(b) for b in d.get("behaviours", [])),
        )


def _parse_seconds(token: str, what: str) -> float:
    tok = token.strip()
    try:
        if _MMSS.match(tok):
            minutes, seconds = int(tok[:2]), int(tok[2:])
            if seconds >= 60:
                raise SchemaViolation(f"{what}: seconds field out of range in {token!r}")
            return float(minutes * 60 + seconds)
        if tok.endswith("s"):
            tok = tok[:-1]
        value = float(tok)
    except ValueError:
        raise SchemaViolation(f"{what}: cannot read time {token!r}") from None
    if not math.isfinite(value):
        raise SchemaViolation(f"{what}: non-finite time {token!r}")
    if value < 0:
        raise SchemaViolation(f"{what}: negative time {token!r}")
    return value


def _parse_duration(text: str) -> float:
    text = text.strip()
    if ":" in text:
        minutes, _, seconds = text.partition(":")
        try:
            return int(minutes) * 60 + float(seconds.rstrip("s"))
        except ValueError:
            raise SchemaViolation(f"cannot read duration {text!r}") from None
    return _parse_seconds(text.rstrip("s") + "s", "duration")


def _format_seconds(value: float) -> str:
    if float(value).is_integer() and value < 100 * 60:
        v = int(value)
        return f"{v // 60:02d}{v % 60:02d}"
    return f"{float(value)!r}s"


def _text(el: ET.Element, tag: str) -> str | None:
    child = el.find(tag)
    if child is None or child.text is None:
        return None
    return child.text.strip() or None


def parse_annotation(xml_text: str, video_id: str | None = None) -> AnnotationRecord:
    """Parse one annotation document.

    ``video_id`` is used only when the root element carries no ``id``
    attribute (the directory loader passes the file stem).
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc
    if root.tag != "video":
        raise SchemaViolation(f"root element must be <video>, got <{root.tag}>")

    vid = root.get("id") or video_id
    if not vid:
        raise SchemaViolation("missing video id")
    duration_text = _text(root, "duration")
    if duration_text is None:
        raise SchemaViolation(f"{vid}: missing <duration>")
    duration = _parse_duration(duration_text)

    intervals = []
    container = root.find("behaviours")
    for i, b in enumerate(container.findall("behaviour") if container is not None else []):
        time_text = _text(b, "time")
        category_text = _text(b, "category")
        if time_text is None or category_text is None:
            raise SchemaViolation(f"{vid}: behaviour #{i} needs <time> and <category>")
        start_tok, sep, end_tok = time_text.partition(":")
        if not sep:
            raise SchemaViolation(f"{vid}: behaviour #{i} time {time_text!r} is not start:end")
        try:
            category = ChunkLabel.parse(category_text)
        except ValueError:
            raise SchemaViolation(f"{vid}: unknown category {category_text!r}") from None
        if not category.is_action:
            raise SchemaViolation(f"{vid}: unknown category {category_text!r}")
        intervals.append(
            BehaviourInterval(
                start_time=_parse_seconds(start_tok, f"{vid} behaviour #{i}"),
                end_time=_parse_seconds(end_tok, f"{vid} behaviour #{i}"),
                category=category,
                intensity=_text(b, "intensity"),
                modality=_text(b, "modality"),
                bodypart=_text(b, "bodypart"),
            )
        )
    return AnnotationRecord(
        video_id=vid, url=_text(root, "url"), duration=duration, behaviours=tuple(intervals)
    )


_CATEGORY_TAG = {
    ChunkLabel.ARM_FLAPPING: "armflapping",
    ChunkLabel.HEADBANGING: "headbanging",
    ChunkLabel.SPINNING: "spinning",
}


def serialize_annotation(record: AnnotationRecord) -> str:
    root = ET.Element("video", id=record.video_id)
    if record.url is not None:
        ET.SubElement(root, "url").text = record.url
    dur = record.duration
    ET.SubElement(root, "duration").text = f"{int(dur)}s" if float(dur).is_integer() else f"{dur!r}s"
    bs = ET.SubElement(root, "behaviours", count=str(len(record.behaviours)), id="b_set")
    for i, b in enumerate(record.behaviours, 1):
        el = ET.SubElement(bs, "behaviour", id=f"b{i}")
        ET.SubElement(el, "time").text = f"{_format_seconds(b.start_time)}:{_format_seconds(b.end_time)}"
        if b.bodypart is not None:
            ET.SubElement(el, "bodypart").text = b.bodypart
        ET.SubElement(el, "category").text = _CATEGORY_TAG[b.category]
        if b.intensity is not None:
            ET.SubElement(el, "intensity").text = b.intensity
        if b.modality is not None:
            ET.SubElement(el, "modality").text = b.modality
    ET.indent(root)
    return ET.tostring(root, encoding="unicode")


def load_annotation_dir(directory: str | Path) -> list[AnnotationRecord]:
    """Parse every ``*.xml`` under ``directory``, sorted by file name."""
    return [
        parse_annotation(p.read_text(encoding="utf-8"), video_id=p.stem)
        for p in sorted(Path(directory).glob("*.xml"))
    ]


def frame_labels_from_intervals(record: AnnotationRecord, fps: float) -> list[ChunkLabel]:
    """Label of every sampled frame; overlaps go to the interval that starts first."""
    if not fps > 0:
        raise ValueError("fps must be positive")
    n = int(math.floor(record.duration * fps + 1e-9))
    times = np.arange(n) / fps
    out = np.full(n, ChunkLabel.NO_CLASS, dtype=object)
    # Paint lowest priority first so the earliest-starting interval ends up on top.
    ranked = sorted(enumerate(record.behaviours), key=lambda ib: (ib[1].start_time, ib[0]))
    for _, b in reversed(ranked):
        out[(times >= b.start_time) & (times < b.end_time)] = b.category
    return list(out)


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    path: str
    annotation: AnnotationRecord
    split: str

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "path": self.path,
            "split": self.split,
            "annotation": self.annotation.to_dict(),
        }


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls(
            [
                ManifestEntry(
                    video_id=d["video_id"],
                    path=d["path"],
                    split=d["split"],
                    annotation=AnnotationRecord.from_dict(d["annotation"]),
                )
                for d in json.loads(text)
            ]
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_manifest(
    records: Iterable[AnnotationRecord],
    paths: Mapping[str, str | Path],
    test_fraction: float = 0.3,
    seed: int = 0,
) -> DatasetManifest:
    """Split whole videos into train/test.

    The test set holds ``floor(test_fraction * N)`` videos chosen by a seeded
    shuffle of the sorted ids, so the split does not depend on input order.
    """
    records = list(records)
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    ids = [r.video_id for r in records]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate video ids: {dupes}")
    for vid in ids:
        if vid not in paths:
            raise MissingVideoFile(vid)

    n = len(records)
    if n < 4:
        warnings.warn(
            f"only {n} video(s); the test split will hold floor({test_fraction}*{n}) of them",
            stacklevel=2,
        )
    order = sorted(ids)
    random.Random(seed).shuffle(order)
    test_ids = set(order[: int(math.floor(test_fraction * n + 1e-9))])
    return DatasetManifest(
        [
            ManifestEntry(
                video_id=r.video_id,
                path=str(paths[r.video_id]),
                annotation=r,
                split="test" if r.video_id in test_ids else "train",
            )
            for r in records
        ]
    )
