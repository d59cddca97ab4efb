import json

import numpy as np
import pytest

from stimdetect.cli import REFERENCE_LEARNABLE, build_parser, main
from stimdetect.labels import ACTION_LABELS
from stimdetect.synthetic import BASE_POSE, action_keypoints, render_pose, write_video

CATEGORY = {"arm-flapping": "armflapping", "headbanging": "headbanging", "spinning": "spinning"}


def _xml(video_id, category):
    return (
        f"<video><url>http://example.org/{video_id}</url><duration>8s</duration>"
        f'<behaviours count="1" id="{video_id}"><behaviour id="b1"><time>0000:0004</time>'
        f"<bodypart>hand</bodypart><category>{category}</category><intensity>high</intensity>"
        "<modality>video</modality></behaviour></behaviours></video>"
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Six 8 s videos: 4 s of one action, then 4 s standing still."""
    root = tmp_path_factory.mktemp("cli")
    (root / "videos").mkdir()
    (root / "ann").mkdir()
    rng = np.random.default_rng(0)
    for k in range(2):
        for label in ACTION_LABELS:
            vid = f"v_{label.value}_{k}"
            kp = np.concatenate([action_keypoints(label, rng), np.repeat(BASE_POSE[None], 40, 0)])
            write_video(root / "videos" / f"{vid}.mp4", render_pose(kp))
            (root / "ann" / f"{vid}.xml").write_text(_xml(vid, CATEGORY[label.value]))
    code = main([
        "preprocess", "--annotations", str(root / "ann"), "--videos", str(root / "videos"),
        "--detector", "blob", "--out", str(root / "data"), "--json",
    ])
    assert code == 0
    return root


def _report(path):
    return json.loads((path / "report.json").read_text())


@pytest.fixture(scope="module")
def trained(workspace):
    manifest = str(workspace / "data" / "manifest.json")
    m1_dir, m2_dir = workspace / "runs" / "m1", workspace / "runs" / "m2"
    assert main(["train-m1", "--manifest", manifest, "--epochs", "2", "--batch-size", "4", "--out", str(m1_dir)]) == 0
    assert main([
        "train-m2", "--manifest", manifest, "--epochs", "3", "--batch-size", "4", "--lr-find",
        "--lr-steps", "20", "--out", str(m2_dir),
    ]) == 0
    return manifest, m1_dir / "final.pt", m2_dir / "final.pt"


def test_preprocess_report(workspace):
    rep = _report(workspace / "data")
    assert rep["videos"] == 6 and rep["train_videos"] + rep["test_videos"] == 6
    assert rep["chunks"] == 18  # three chunks per 80-frame video
    assert set(rep["chunk_labels"]) <= {"no-class", "arm-flapping", "headbanging", "spinning"}
    assert len(list((workspace / "data" / "chunks").glob("*.npz"))) == 18


def test_train_reports(workspace, trained):
    m1 = _report(workspace / "runs" / "m1")
    assert m1["epochs"] == 2 and m1["config"]["batch_size"] == 4
    m2 = _report(workspace / "runs" / "m2")
    assert m2["config"]["learning_rate"] == m2["lr_suggestion"] > 0
    assert trained[1].exists() and trained[2].exists()


def test_infer_writes_jsonl(workspace, trained, capsys):
    _, m1, m2 = trained
    video = workspace / "videos" / "v_spinning_0.mp4"
    out = workspace / "infer"
    assert main(["infer", str(video), "--m1", str(m1), "--m2", str(m2), "--out", str(out)]) == 0
    rows = [json.loads(line) for line in (out / "v_spinning_0.jsonl").read_text().splitlines()]
    assert [r["chunk_index"] for r in rows] == [0, 1, 2]
    assert _report(out)["videos"]["v_spinning_0"]["chunks"] == 3

    capsys.readouterr()
    assert main(["infer", str(video), "--m1", str(m1), "--m2", str(m2), "--no-prefetch", "--json"]) == 0
    captured = capsys.readouterr()
    assert len(captured.out.splitlines()) == 3 and json.loads(captured.out.splitlines()[0])["video_id"] == "v_spinning_0"
    assert json.loads(captured.err)["config"]["use_prefetch"] is False


def test_evaluate_and_sweep(workspace, trained):
    manifest, m1, m2 = trained
    out = workspace / "eval"
    assert main(["evaluate", "--manifest", manifest, "--m1", str(m1), "--m2", str(m2), "--split", "train", "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["chunks"] > 0 and 0 <= rep["m1"]["f1"] <= 1
    assert {"m2_all_action_chunks", "m2_m1_positive_chunks", "pipeline", "m2_calls"} <= set(rep)
    assert (out / "cached_probs.npz").exists()

    sweep_out = workspace / "sweep"
    assert main(["sweep-delta", "--probs", str(out / "cached_probs.npz"), "--out", str(sweep_out)]) == 0
    rows = _report(sweep_out)["rows"]
    assert len(rows) == 20
    assert [r["noclass_count"] for r in rows] == sorted(r["noclass_count"] for r in rows)


def test_benchmark(workspace, trained):
    _, m1, m2 = trained
    out = workspace / "bench"
    assert main(["benchmark", "--m1", str(m1), "--m2", str(m2), "--detector", "blob", "--n", "4", "--out", str(out)]) == 0
    reports = _report(out)["reports"]
    assert [r["component"] for r in reports] == ["m1", "m2", "prefetch"]
    assert all(r["fps"] > 0 and r["n_chunks"] == 4 for r in reports)


def test_missing_file_is_reported(tmp_path, capsys):
    code = main(["infer", str(tmp_path / "nope.mp4"), "--m1", str(tmp_path / "m1.pt"), "--m2", str(tmp_path / "m2.pt")])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "file_not_found" and "message" in err


def test_unknown_preset_is_reported(workspace, capsys):
    manifest = str(workspace / "data" / "manifest.json")
    assert main(["train-m1", "--manifest", manifest, "--preset", "bogus"]) == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "invalid_argument"


def test_benchmark_needs_a_component(capsys):
    assert main(["benchmark", "--n", "2"]) == 1


def test_parser_lists_every_command():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {
        "preprocess", "train-m1", "train-m2", "train-prefetch", "distill",
        "infer", "evaluate", "sweep-delta", "benchmark", "footprint",
    }
    assert set(REFERENCE_LEARNABLE) == {"prefetch_head", "m1", "m2", "teacher", "student"}


def test_train_prefetch(tmp_path):
    import cv2

    rng = np.random.default_rng(0)
    for name in ("child", "adult"):
        (tmp_path / name).mkdir()
        for i in range(2):
            cv2.imwrite(str(tmp_path / name / f"{i}.png"), rng.integers(0, 255, (40, 30, 3), dtype=np.uint8))
    out = tmp_path / "run"
    assert main(["train-prefetch", "--images", str(tmp_path), "--epochs", "1", "--batch-size", "2", "--out", str(out)]) == 0
    assert (out / "final.pt").exists() and _report(out)["epochs"] == 1


def test_distill(workspace):
    out = workspace / "runs" / "distill"
    manifest = str(workspace / "data" / "manifest.json")
    assert main(["distill", "--manifest", manifest, "--epochs", "1", "--batch-size", "8", "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["learnable_ratio"] == pytest.approx(0.3738, abs=5e-4)
    assert (out / "teacher" / "final.pt").exists() and (out / "student" / "final.pt").exists()
