"""Integration tests for stablegrad.commands.export_ref module."""
from pathlib import Path

import numpy as np
import pytest

from stablegrad.commands.export_ref import DEFAULT_NAME, build_field, main, run_export_ref
from stablegrad.core.config import ExperimentConfig
from stablegrad.core.reference import MAGIC, load_reference
from stablegrad.utils.exceptions import ConfigError


class TestRunExportRef:
    """Tests for exporting and reading back reference files."""

    def test_burgers_default_grid(self, tiny_config, tmp_path):
        """Burgers exports on the requested grid and matches the initial condition."""
        path = run_export_ref(ExperimentConfig.from_dict(tiny_config), tmp_path / "b.sgref")
        assert path.read_bytes().startswith(MAGIC)
        ref = load_reference(path)
        assert ref.kind == "burgers1d"
        assert ref.dims == [17, 9]
        assert ref.params["method"] == "cole_hopf"
        np.testing.assert_allclose(ref.values[:, 0], -np.sin(np.pi * ref.axes[0]), atol=1e-6)

    def test_default_path_under_output_dir(self, tiny_config):
        """Without a path the file lands in the output directory."""
        cfg = ExperimentConfig.from_dict(tiny_config)
        path = run_export_ref(cfg)
        assert path.name == DEFAULT_NAME
        assert path.parent == Path(tiny_config["output"]["dir"])

    def test_poisson(self, tiny_config, tmp_path):
        """Poisson exports a square grid at the requested resolution."""
        tiny_config["problem"]["kind"] = "poisson2d"
        tiny_config["validation"]["resolution"] = [5]
        ref = load_reference(run_export_ref(ExperimentConfig.from_dict(tiny_config), tmp_path / "p.sgref", [9]))
        assert ref.dims == [9, 9]
        assert ref.axis_names == ["x", "y"]

    def test_forced_mol_records_method(self, tiny_config, tmp_path):
        """Forcing the method-of-lines solver is recorded in the header."""
        cfg = ExperimentConfig.from_dict(tiny_config)
        ref = load_reference(run_export_ref(cfg, tmp_path / "m.sgref", method="mol"))
        assert ref.params["method"] == "mol"
        assert np.all(np.isfinite(ref.values))

    def test_step_above_bound_rejected(self, tiny_config):
        """A time step above the explicit stability bound is rejected."""
        with pytest.raises(ConfigError, match="stability bound"):
            build_field(ExperimentConfig.from_dict(tiny_config), [33, 5], "mol", dt=1.0)


class TestMain:
    """Tests for the export-ref entry point."""

    def test_resolution_flag(self, config_file, tmp_path):
        """--resolution sets the exported grid."""
        path = tmp_path / "r.sgref"
        code = main(["--config", str(config_file), "--path", str(path), "--resolution", "33", "5", "-q"])
        assert code == 0
        assert load_reference(path).dims == [33, 5]

    def test_dt_too_large_exits_2(self, config_file, tmp_path, capsys):
        """An unstable --dt exits 2 and writes no file."""
        with pytest.raises(SystemExit) as exc_info:
            main(["--config", str(config_file), "--path", str(tmp_path / "x.sgref"),
                  "--resolution", "33", "5", "--method", "mol", "--dt", "1.0"])
        assert exc_info.value.code == 2
        assert "stability bound" in capsys.readouterr().err
        assert not (tmp_path / "x.sgref").exists()
