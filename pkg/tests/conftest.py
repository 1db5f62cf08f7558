import pytest

from core.lattice import BoundaryCondition, BoxSpec, Containment


@pytest.fixture(autouse=True)
def _quiet_env(monkeypatch, tmp_path):
    """No log file in the working tree; env-driven defaults at their built-in values."""
    monkeypatch.setenv("KMER_LOG_FILE", "")
    monkeypatch.setenv("KMER_OUTPUT_DIR", str(tmp_path / "runs"))
    for name in ("KMER_EPSILON0", "KMER_K0", "KMER_ENUM_LIMIT", "KMER_WORKERS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def box2x2():
    return BoxSpec(L=2, k=2, containment=Containment.FULLY_CONTAINED)


@pytest.fixture
def box1x4():
    return BoxSpec(L=4, k=2, containment=Containment.FULLY_CONTAINED, height=1)


@pytest.fixture
def plus_box():
    return BoxSpec(L=20, k=2, bc=BoundaryCondition.PLUS)


@pytest.fixture
def small_config(tmp_path):
    """Factory for run configs small enough to finish in well under a second."""

    def make(**extra):
        data = {"L": 12, "k": 2, "z": 0.3, "sweeps": 40, "thermalization": 4, "seed": 11}
        data["output_dir"] = str(tmp_path / "run")
        data.update(extra)
        return data

    return make
