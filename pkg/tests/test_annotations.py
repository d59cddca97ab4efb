import json
import warnings

import pytest
import xmlschema
from hypothesis import given, settings
from hypothesis import strategies as st

from stimdetect.annotations import (
    SCHEMA_PATH,
    AnnotationRecord,
    BehaviourInterval,
    DatasetManifest,
    build_manifest,
    frame_labels_from_intervals,
    load_annotation_dir,
    parse_annotation,
    serialize_annotation,
)
from stimdetect.errors import IntervalOutOfRange, MalformedXml, MissingVideoFile, SchemaViolation
from stimdetect.labels import ChunkLabel

from conftest import GOLDEN_DIR

NC, AF, HB, SP = ChunkLabel


def doc(duration="90s", behaviours="", vid="v1"):
    return f'<video id="{vid}"><duration>{duration}</duration><behaviours>{behaviours}</behaviours></video>'


def beh(time, category="headbanging", extra=""):
    return f"<behaviour><time>{time}</time><category>{category}</category>{extra}</behaviour>"


def test_single_behaviour_field_by_field():
    rec = parse_annotation(doc("90", beh("10s:25s", extra="<intensity>low</intensity><bodypart>head</bodypart>")))
    assert rec.video_id == "v1"
    assert rec.duration == 90.0
    assert len(rec.behaviours) == 1
    b = rec.behaviours[0]
    assert (b.start_time, b.end_time, b.category) == (10.0, 25.0, HB)
    assert (b.intensity, b.bodypart, b.modality) == ("low", "head", None)


def test_zero_behaviours():
    rec = parse_annotation(doc("60s"))
    assert rec.behaviours == ()
    assert parse_annotation('<video id="x"><duration>60</duration></video>').behaviours == ()


def test_unknown_category_rejected():
    with pytest.raises(SchemaViolation):
        parse_annotation(doc(behaviours=beh("0010:0020", "jumping")))


def test_no_class_is_not_an_annotation_category():
    with pytest.raises(SchemaViolation):
        parse_annotation(doc(behaviours=beh("0010:0020", "no-class")))


@pytest.mark.parametrize(
    "text",
    ["<video><duration>5", "not xml at all", ""],
)
def test_malformed(text):
    with pytest.raises(MalformedXml):
        parse_annotation(text)


@pytest.mark.parametrize(
    "xml",
    [
        '<clip id="a"><duration>5</duration></clip>',
        '<video id="a"></video>',
        doc(behaviours="<behaviour><time>0001:0002</time></behaviour>"),
        doc(behaviours=beh("12")),
        doc(behaviours=beh("-3s:4s")),
        doc(behaviours=beh("0070:0080")),  # 70 is not a valid seconds field
        doc(behaviours=beh("0020:0010")),  # end before start
        doc("0s"),
    ],
)
def test_schema_violations(xml):
    with pytest.raises(SchemaViolation):
        parse_annotation(xml)


def test_interval_past_duration():
    with pytest.raises(IntervalOutOfRange):
        parse_annotation(doc("20s", beh("0010:0025")))


def test_mmss_and_seconds_tokens():
    rec = parse_annotation(doc("1:32", beh("0102:0110") + beh("4.5s:12.25s", "spinning") + beh("3:7", "armflapping")))
    assert rec.duration == 92.0
    assert [(b.start_time, b.end_time) for b in rec.behaviours] == [(62.0, 70.0), (4.5, 12.25), (3.0, 7.0)]


def test_document_order_kept():
    rec = parse_annotation(doc(behaviours=beh("0050:0059", "spinning") + beh("0001:0005", "armflapping")))
    assert [b.category for b in rec.behaviours] == [SP, AF]


def test_missing_root_id_uses_argument():
    rec = parse_annotation("<video><duration>5</duration></video>", video_id="from_file")
    assert rec.video_id == "from_file"
    with pytest.raises(SchemaViolation):
        parse_annotation("<video><duration>5</duration></video>")


def test_golden_examples_parse():
    recs = {r.video_id: r for r in load_annotation_dir(GOLDEN_DIR)}
    assert set(recs) == {"v_ArmFlapping_01", "v_HeadBanging_07", "v_Spinning_12"}
    af = recs["v_ArmFlapping_01"]
    assert af.duration == 47.0
    assert [(b.start_time, b.end_time, b.intensity) for b in af.behaviours] == [(2.0, 9.0, "high"), (31.0, 40.0, "medium")]
    hb = recs["v_HeadBanging_07"]
    assert hb.duration == 92.0
    assert [(b.start_time, b.end_time) for b in hb.behaviours] == [(10.0, 25.0), (62.0, 70.0)]
    sp = recs["v_Spinning_12"]
    assert sp.duration == 30.5
    assert [(b.start_time, b.end_time, b.category) for b in sp.behaviours] == [(4.5, 12.25, SP)]


def test_golden_examples_validate_against_schema():
    schema = xmlschema.XMLSchema(str(SCHEMA_PATH))
    for path in sorted(GOLDEN_DIR.glob("*.xml")):
        schema.validate(str(path))


def test_schema_rejects_unknown_category():
    schema = xmlschema.XMLSchema(str(SCHEMA_PATH))
    assert not schema.is_valid(doc(behaviours=beh("0001:0002", "jumping")))


# --- round trip ---------------------------------------------------------------

times = st.one_of(
    st.integers(min_value=0, max_value=5999).map(float),
    st.floats(min_value=0, max_value=7200, allow_nan=False, allow_infinity=False),
)
tags = st.one_of(st.none(), st.sampled_from(["high", "low", "hand", "head", "video"]))


@st.composite
def records(draw):
    n = draw(st.integers(0, 5))
    intervals = []
    for _ in range(n):
        a, b = sorted(draw(st.lists(times, min_size=2, max_size=2, unique=True)))
        intervals.append(
            BehaviourInterval(a, b, draw(st.sampled_from([AF, HB, SP])), draw(tags), draw(tags), draw(tags))
        )
    floor = max([b.end_time for b in intervals], default=0.0)
    duration = floor + draw(st.floats(min_value=0.1, max_value=100, allow_nan=False))
    url = draw(st.one_of(st.none(), st.just("http://example.org/v")))
    return AnnotationRecord(draw(st.from_regex(r"v_[A-Za-z0-9]{1,8}", fullmatch=True)), duration, tuple(intervals), url)


@settings(max_examples=200, deadline=None)
@given(records())
def test_round_trip(record):
    text = serialize_annotation(record)
    first = parse_annotation(text)
    assert first == record
    assert parse_annotation(serialize_annotation(first)) == first


_SCHEMA = xmlschema.XMLSchema(str(SCHEMA_PATH))


@settings(max_examples=100, deadline=None)
@given(records())
def test_serialized_documents_are_schema_valid(record):
    _SCHEMA.validate(serialize_annotation(record))


# --- frame labels -------------------------------------------------------------


def test_frame_labels_spinning_second():
    rec = AnnotationRecord("v", 4.0, (BehaviourInterval(1.0, 2.0, SP),))
    labels = frame_labels_from_intervals(rec, 10)
    assert labels == [NC] * 10 + [SP] * 10 + [NC] * 20


def test_frame_labels_no_intervals():
    assert frame_labels_from_intervals(AnnotationRecord("v", 3.3), 10) == [NC] * 33


def test_frame_labels_full_cover():
    rec = AnnotationRecord("v", 1.0, (BehaviourInterval(0.0, 1.0, AF),))
    assert frame_labels_from_intervals(rec, 10) == [AF] * 10


def test_overlap_goes_to_earliest_start():
    rec = AnnotationRecord("v", 3.0, (BehaviourInterval(1.0, 3.0, HB), BehaviourInterval(0.5, 1.5, SP)))
    labels = frame_labels_from_intervals(rec, 10)
    assert labels[5:15] == [SP] * 10
    assert labels[15:30] == [HB] * 15


@given(
    st.floats(min_value=0.05, max_value=500, allow_nan=False),
    st.sampled_from([1, 5, 10, 25, 29.97, 30]),
)
def test_frame_label_length(duration, fps):
    import math

    assert len(frame_labels_from_intervals(AnnotationRecord("v", duration), fps)) == math.floor(duration * fps + 1e-9)


def test_frame_labels_reject_bad_fps():
    with pytest.raises(ValueError):
        frame_labels_from_intervals(AnnotationRecord("v", 1.0), 0)


# --- manifest -----------------------------------------------------------------


def _recs(n):
    return [AnnotationRecord(f"vid{i:02d}", 10.0) for i in range(n)]


def test_manifest_ten_videos_seed7():
    recs = _recs(10)
    paths = {r.video_id: f"/data/{r.video_id}.mp4" for r in recs}
    m = build_manifest(recs, paths, 0.3, seed=7)
    assert len(m.split("test")) == 3 and len(m.split("train")) == 7
    again = build_manifest(list(reversed(recs)), paths, 0.3, seed=7)
    assert {e.video_id for e in again.split("test")} == {e.video_id for e in m.split("test")}


def test_manifest_single_video_warns():
    recs = _recs(1)
    with pytest.warns(UserWarning):
        m = build_manifest(recs, {"vid00": "a.mp4"}, 0.3)
    assert m.split("test") == [] and len(m.split("train")) == 1


def test_manifest_missing_path_names_id():
    recs = _recs(3)
    with pytest.raises(MissingVideoFile) as info:
        build_manifest(recs, {"vid00": "a", "vid02": "c"})
    assert info.value.video_id == "vid01"


def test_manifest_rejects_duplicates_and_bad_fraction():
    recs = _recs(2)
    paths = {r.video_id: "x" for r in recs}
    with pytest.raises(ValueError):
        build_manifest(recs + recs[:1], paths)
    with pytest.raises(ValueError):
        build_manifest(recs, paths, 0.0)


@given(st.integers(1, 40), st.integers(0, 10_000), st.floats(0.05, 0.95))
@settings(deadline=None)
def test_manifest_partitions(n, seed, frac):
    recs = _recs(n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = build_manifest(recs, {r.video_id: "p" for r in recs}, frac, seed)
    train = {e.video_id for e in m.split("train")}
    test = {e.video_id for e in m.split("test")}
    assert train | test == {r.video_id for r in recs}
    assert not train & test
    import math

    assert len(test) == math.floor(frac * n + 1e-9)


@pytest.mark.filterwarnings("ignore:only 3 video")
def test_manifest_json_round_trip(tmp_path):
    recs = load_annotation_dir(GOLDEN_DIR)
    m = build_manifest(recs, {r.video_id: f"{r.video_id}.mp4" for r in recs}, 0.34, seed=1)
    m.save(tmp_path / "m.json")
    doc_ = json.loads((tmp_path / "m.json").read_text())
    assert isinstance(doc_, list) and set(doc_[0]) == {"video_id", "path", "split", "annotation"}
    assert DatasetManifest.load(tmp_path / "m.json") == m
