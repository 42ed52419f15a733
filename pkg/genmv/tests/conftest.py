import subprocess
import sys

import pytest
import torch


def generate_dataset(out, samples, grid, bs, ue, points, seed=0, extra=()):
    """Invoke the sensing toolkit CLI; the dataset directory is the only
    interface between the two packages."""
    cmd = [sys.executable, "-m", "mvsense.cli", "gen-dataset",
           "--samples", str(samples), "--grid", str(grid),
           "--bs", str(bs), "--ue", str(ue), "--antennas", "4",
           "--points", str(points), "--seed", str(seed),
           "--out", str(out), *extra]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"dataset generation failed:\n{proc.stderr}")
    return out


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "tiny"
    return generate_dataset(out, samples=10, grid=8, bs=2, ue=3, points=32,
                            seed=12)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """64 training samples at D = 32x32, B = 4, U = 8 (plus val/test)."""
    out = tmp_path_factory.mktemp("data") / "desk"
    return generate_dataset(out, samples=80, grid=32, bs=4, ue=8, points=128,
                            seed=21)


def torch_chamfer(a: torch.Tensor, b: torch.Tensor) -> float:
    """Symmetric squared-distance Chamfer metric (reference for tests)."""
    d = torch.cdist(a, b) ** 2
    return float(d.min(dim=1).values.mean() + d.min(dim=0).values.mean())
