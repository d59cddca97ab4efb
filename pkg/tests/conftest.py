from pathlib import Path

import numpy as np
import pytest
import torch

from stimdetect.synthetic import blob_chunk, write_video

ROOT = Path(__file__).resolve().parents[1]
GOLDEN_DIR = ROOT / "docs" / "annotation_examples"


def central_difference(f, params, eps=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. each tensor in ``params`` (float64)."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / max(a.norm(), b.norm(), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blob_video(tmp_path):
    """A 10 s, 10 fps synthetic video: a still blob for 5 s, then an oscillating one."""
    r = np.random.default_rng(5)
    frames = np.concatenate([blob_chunk(False, r)[:25], blob_chunk(False, r)[:25],
                             blob_chunk(True, r)[:25], blob_chunk(True, r)[:25]])
    return write_video(tmp_path / "clip.mp4", frames)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(name, passed, detail)``; asserts ``passed``."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(name: str, passed: bool, detail: str = "") -> None:
        line = f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
