"""Pytest configuration and fixtures for stablegrad tests."""
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict

import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from stablegrad.core.config import DEFAULT_CONFIG, deep_copy, deep_merge  # noqa: E402
from stablegrad.core.linalg import SeededRng  # noqa: E402
from stablegrad.core.network import Initializer, MlpNetwork, initialize  # noqa: E402


@pytest.fixture(autouse=True)
def reset_verbosity():
    """Restore default log verbosity after every test."""
    from stablegrad.utils.logging import set_verbosity

    yield
    set_verbosity(quiet=False, debug=False)


@pytest.fixture
def make_net() -> Callable[..., MlpNetwork]:
    """Factory for small seeded networks."""
    def factory(input_dim: int = 2, depth: int = 2, width: int = 5, activation: str = "tanh",
                seed: int = 0, output_dim: int = 1, **kwargs) -> MlpNetwork:
        net = MlpNetwork.build(input_dim, output_dim, depth, width, activation, **kwargs)
        initialize(net, Initializer("fan_in"), SeededRng(seed))
        # Non-zero biases so every parameter enters the gradient checks.
        rng = SeededRng(seed + 1000)
        for prm in net.params:
            prm["bias"] = rng.normal(prm["bias"].shape, 0.3)
        return net
    return factory


@pytest.fixture
def tiny_config(tmp_path: Path) -> Dict[str, Any]:
    """A Burgers config small enough to train in well under a second."""
    return deep_merge(deep_copy(DEFAULT_CONFIG), {
        "network": {"depth": 2, "width": 6},
        "phases": [
            {"steps": 3, "preprocessor": "stablegrad"},
            {"steps": 3, "preprocessor": "none"},
        ],
        "batch": {"pde": 24, "bc": 8, "ic": 8},
        "validation": {"pde": 32, "bc": 8, "ic": 8, "resolution": [17, 9]},
        "diagnostics": {"pde": 12, "bc": 4, "ic": 4},
        "output": {"dir": str(tmp_path / "run")},
    })


@pytest.fixture
def rng() -> SeededRng:
    return SeededRng(1234)


@pytest.fixture
def config_file(tmp_path: Path, tiny_config: Dict[str, Any]) -> Path:
    """tiny_config written as JSON."""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_config))
    return path
