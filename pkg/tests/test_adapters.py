import numpy as np
import pytest
import torch
import torchvision

from stimdetect.adapters import FasterRCNNPersonDetector, KeypointRCNNPoseEstimator, load_factory
from stimdetect.errors import BackboneUnavailable


@pytest.mark.parametrize("cls", [KeypointRCNNPoseEstimator, FasterRCNNPersonDetector])
def test_needs_weights(cls):
    with pytest.raises(BackboneUnavailable):
        cls(pretrained=False)


def test_bad_weights_file(tmp_path):
    (tmp_path / "w.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(BackboneUnavailable):
        FasterRCNNPersonDetector(pretrained=False, weights_path=tmp_path / "w.pt")


def test_local_weights_round_trip(tmp_path):
    torch.manual_seed(0)
    ref = torchvision.models.detection.keypointrcnn_resnet50_fpn(weights=None, weights_backbone=None)
    torch.save(ref.state_dict(), tmp_path / "kp.pt")
    est = KeypointRCNNPoseEstimator(pretrained=False, weights_path=tmp_path / "kp.pt", min_score=0.0)
    out = est(np.random.default_rng(0).random((100, 100, 3), dtype=np.float32))
    assert out.shape == (17, 3) and out.dtype == np.float32
    assert ((out >= 0) & (out <= 1)).all()


def test_load_factory():
    assert load_factory("collections:OrderedDict") == {}
    with pytest.raises(ValueError):
        load_factory("collections.OrderedDict")
