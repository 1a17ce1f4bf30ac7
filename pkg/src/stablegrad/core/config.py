"""
Experiment configuration for stablegrad.
Handles defaults, presets, loading, overrides and saving.

Resolution order: DEFAULT_CONFIG <- preset <- config file <- ``key=value`` overrides.
"""
import copy
import json
import math
import pathlib
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import yaml

from stablegrad.core.linalg import SeededRng
from stablegrad.core.network import Activation, FourierFeatures, Initializer, MlpNetwork, initialize
from stablegrad.core.optimizers import (
    OPTIMIZER_KINDS,
    SCHEDULE_KINDS,
    LrSchedule,
    StableGradConfig,
    load_multiplier_table,
)
from stablegrad.core.residuals import BatchSizes, ProblemSpec
from stablegrad.core.training import PhaseSpec, total_steps
from stablegrad.utils.exceptions import ConfigError, ContractError

CONFIG_VERSION = "1.0"

DEFAULT_CONFIG: Dict[str, Any] = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "sweep_seeds": [0, 1, 2],
    "problem": {
        "kind": "burgers1d",
        "nu": 0.05,
        "k": 10.0 * math.pi,
        "m": 10,
        "weights": {},
        "normalize_pde": True,
    },
    "network": {
        "depth": 6,
        "width": 32,
        "activation": "tanh",
        "norm": None,
        "init": {"mode": "fan_in", "gain": None, "distribution": "normal"},
        "fourier": {"enabled": False, "frequencies": 12, "include_raw": True},
    },
    "optimizer": {
        "kind": "adamw",
        "lr": 1e-3,
        "weight_decay": 0.0,
        "schedule": "cosine_annealing",
        "warmup_steps": 0,
        "multiplier_table": None,
    },
    "stablegrad": {
        "epsilon": 1e-12,
        "reference_scale": "output_adjoint",
        "block_mode": "per_layer_joint",
    },
    "phases": [
        {"steps": 1000, "preprocessor": "stablegrad"},
        {"steps": 1000, "preprocessor": "none"},
    ],
    "batch": {"pde": 2000, "bc": 200, "ic": 200, "resample_every": 0},
    "validation": {"pde": 10000, "bc": 1000, "ic": 1000, "resolution": [256, 101]},
    "diagnostics": {"every": 0, "pde": 192, "bc": 32, "ic": 32, "jacobian_cap": 20000000},
    "reference": {"method": "auto", "path": None},
    "output": {"dir": "runs/latest", "log_every": 1},
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "burgers-desk": {},
    "burgers-full": {
        "problem": {"kind": "burgers1d", "nu": 1e-4},
        "network": {"width": 64},
        "phases": [
            {"steps": 25000, "preprocessor": "stablegrad"},
            {"steps": 25000, "preprocessor": "none"},
        ],
        "batch": {"pde": 100000, "bc": 2048, "ic": 2048, "resample_every": 1},
        "validation": {"resolution": [4096, 401]},
    },
    "burgers-diagnostic": {
        "network": {"depth": 4, "width": 32},
        "optimizer": {"schedule": "constant"},
        "phases": [{"steps": 2000, "preprocessor": "stablegrad"}],
        "diagnostics": {"every": 100},
    },
    "poisson-desk": {
        "problem": {"kind": "poisson2d"},
        "batch": {"pde": 2048, "bc": 512},
        "validation": {"pde": 8192, "bc": 2048, "resolution": [128]},
    },
    "poisson-full": {
        "problem": {"kind": "poisson2d"},
        "network": {"width": 64},
        "phases": [
            {"steps": 25000, "preprocessor": "stablegrad"},
            {"steps": 25000, "preprocessor": "none"},
        ],
        "batch": {"pde": 16384, "bc": 4096, "resample_every": 1},
        "validation": {"pde": 65536, "bc": 16384, "resolution": [256]},
    },
    "helmholtz-desk": {
        "problem": {"kind": "helmholtz", "m": 2, "k": 2.0 * math.pi},
        "network": {"activation": "silu", "fourier": {"enabled": True, "frequencies": 4}},
        "optimizer": {"lr": 1e-3, "schedule": "warmup_then_constant", "warmup_steps": 100},
        "batch": {"pde": 2048, "bc": 512},
        "validation": {"pde": 8192, "bc": 2048, "resolution": [32]},
    },
    "helmholtz-full": {
        "problem": {"kind": "helmholtz", "m": 10, "k": 10.0 * math.pi},
        "network": {"width": 64, "activation": "silu", "fourier": {"enabled": True, "frequencies": 12}},
        "optimizer": {"lr": 1e-4, "schedule": "warmup_then_constant", "warmup_steps": 1000},
        "phases": [
            {"steps": 25000, "preprocessor": "stablegrad"},
            {"steps": 25000, "preprocessor": "none"},
        ],
        "batch": {"pde": 32768, "bc": 8192, "resample_every": 1},
        "validation": {"pde": 65536, "bc": 16384, "resolution": [128]},
    },
}


def deep_copy(d: Dict[str, Any]) -> Dict[str, Any]:
    return copy.deepcopy(d)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Deep merge two dictionaries, override takes precedence. Lists are replaced."""
    result = deep_copy(base)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def get_path(d: Dict[str, Any], path: str, default: Any = None) -> Any:
    """
    Get value by dot-notation path.

    Example: get_path(cfg, 'optimizer.lr')
    """
    value: Any = d
    for key in path.split('.'):
        if isinstance(value, dict) and key in value:
            value = value[key]
        else:
            return default
    return value


def set_path(d: Dict[str, Any], path: str, value: Any) -> None:
    """Set value by dot-notation path, creating intermediate dicts."""
    keys = path.split('.')
    node = d
    for key in keys[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[keys[-1]] = value


def list_keys(d: Dict[str, Any], prefix: str = '') -> List[str]:
    keys = []
    for k, v in d.items():
        key = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict) and v:
            keys.extend(list_keys(v, key))
        else:
            keys.append(key)
    return keys


def parse_value(raw: str) -> Any:
    """Parse an override value: JSON when possible, otherwise the raw string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        lowered = raw.lower()
        if lowered in ('true', 'false'):
            return lowered == 'true'
        if lowered in ('none', 'null'):
            return None
        return raw


def parse_override(item: str) -> tuple:
    if '=' not in item:
        raise ConfigError(f"override '{item}' must look like key=value")
    key, raw = item.split('=', 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{item}' has an empty key")
    return key, parse_value(raw)


def read_config_file(path: Union[str, pathlib.Path]) -> Dict[str, Any]:
    path = pathlib.Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            if path.suffix.lower() in ('.yaml', '.yml'):
                data = yaml.safe_load(f) or {}
            else:
                data = json.load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"Could not read {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping at the top level")
    return data


def resolve_config_dict(
    path: Optional[Union[str, pathlib.Path]] = None,
    preset: Optional[str] = None,
    overrides: Iterable[str] = (),
) -> Dict[str, Any]:
    merged = deep_copy(DEFAULT_CONFIG)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}', expected one of {sorted(PRESETS)}")
        merged = deep_merge(merged, PRESETS[preset])
    if path is not None:
        merged = deep_merge(merged, read_config_file(path))
    for item in overrides:
        key, value = parse_override(item)
        set_path(merged, key, value)
    return merged


# ---------------------------------------------------------------------------
# Typed view
# ---------------------------------------------------------------------------

def _section(d: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = d.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    return value


def _sizes(d: Dict[str, Any], name: str) -> BatchSizes:
    sec = _section(d, name)
    try:
        return BatchSizes(int(sec.get("pde", 1)), int(sec.get("bc", 1)), int(sec.get("ic", 1)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid batch sizes in '{name}': {e}") from e


@dataclass
class FourierSpec:
    enabled: bool = False
    frequencies: int = 12
    include_raw: bool = True


@dataclass
class NetworkSpec:
    depth: int = 6
    width: int = 32
    activation: str = "tanh"
    norm: Optional[str] = None
    init: Initializer = field(default_factory=Initializer)
    fourier: FourierSpec = field(default_factory=FourierSpec)

    def build(self, input_dim: int, rng: SeededRng) -> MlpNetwork:
        """Build and initialize a scalar-output network for ``input_dim`` coordinates."""
        fourier = None
        if self.fourier.enabled:
            fourier = FourierFeatures(
                input_dim,
                tuple(float(f) for f in range(1, self.fourier.frequencies + 1)),
                self.fourier.include_raw,
            )
        net = MlpNetwork.build(input_dim, 1, self.depth, self.width, self.activation, norm=self.norm, fourier=fourier)
        initialize(net, self.init, rng)
        return net


@dataclass
class OptimizerSpec:
    kind: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.0
    schedule: str = "cosine_annealing"
    warmup_steps: int = 0
    multiplier_table: Optional[str] = None

    def lr_schedule(self, steps: int, kind: Optional[str] = None) -> LrSchedule:
        kind = kind or self.schedule
        intervals = []
        if kind == "piecewise_multiplier":
            intervals = load_multiplier_table(self.multiplier_table)
        return LrSchedule(kind, self.lr, steps, self.warmup_steps, intervals)


@dataclass
class ValidationSpec:
    sizes: BatchSizes = field(default_factory=BatchSizes)
    resolution: List[int] = field(default_factory=lambda: [256, 101])


@dataclass
class DiagnosticsSpec:
    every: int = 0
    sizes: BatchSizes = field(default_factory=lambda: BatchSizes(192, 32, 32))
    jacobian_cap: int = 20_000_000


@dataclass
class ReferenceSpec:
    method: str = "auto"
    path: Optional[str] = None


@dataclass
class OutputSpec:
    dir: str = "runs/latest"
    log_every: int = 1


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    network: NetworkSpec
    optimizer: OptimizerSpec
    stablegrad: StableGradConfig
    phases: List[PhaseSpec]
    batch: BatchSizes
    resample_every: int
    validation: ValidationSpec
    diagnostics: DiagnosticsSpec
    reference: ReferenceSpec
    output: OutputSpec
    seed: int = 0
    sweep_seeds: List[int] = field(default_factory=lambda: [0, 1, 2])

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'ExperimentConfig':
        try:
            return cls._from_dict(d)
        except ContractError as e:
            raise ConfigError(str(e)) from e
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e

    @classmethod
    def _from_dict(cls, d: Dict[str, Any]) -> 'ExperimentConfig':
        version = d.get("version", CONFIG_VERSION)
        if str(version) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}, expected {CONFIG_VERSION}")
        prob = _section(d, "problem")
        problem = ProblemSpec(
            kind=prob.get("kind", "burgers1d"),
            nu=float(prob.get("nu", 0.05)),
            k=float(prob.get("k", 10.0 * math.pi)),
            m=int(prob.get("m", 10)),
            weights=dict(prob.get("weights") or {}),
            normalize_pde=bool(prob.get("normalize_pde", True)),
        )

        net = _section(d, "network")
        init = _section(net, "init")
        four = _section(net, "fourier")
        network = NetworkSpec(
            depth=int(net.get("depth", 6)),
            width=int(net.get("width", 32)),
            activation=net.get("activation", "tanh"),
            norm=net.get("norm"),
            init=Initializer(init.get("mode", "fan_in"), init.get("gain"), init.get("distribution", "normal")),
            fourier=FourierSpec(
                bool(four.get("enabled", False)), int(four.get("frequencies", 12)), bool(four.get("include_raw", True))
            ),
        )
        if network.depth < 1 or network.width < 1:
            raise ConfigError("network.depth and network.width must be >= 1")
        Activation(network.activation)

        opt = _section(d, "optimizer")
        optimizer = OptimizerSpec(
            kind=opt.get("kind", "adamw"),
            lr=float(opt.get("lr", 1e-3)),
            weight_decay=float(opt.get("weight_decay", 0.0)),
            schedule=opt.get("schedule", "cosine_annealing"),
            warmup_steps=int(opt.get("warmup_steps", 0)),
            multiplier_table=opt.get("multiplier_table"),
        )
        if optimizer.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer '{optimizer.kind}', expected one of {OPTIMIZER_KINDS}")
        if optimizer.schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule '{optimizer.schedule}', expected one of {SCHEDULE_KINDS}")
        if optimizer.multiplier_table is not None and not pathlib.Path(optimizer.multiplier_table).exists():
            raise ConfigError(f"multiplier table not found: {optimizer.multiplier_table}")

        sg = _section(d, "stablegrad")
        stablegrad = StableGradConfig(
            float(sg.get("epsilon", 1e-12)),
            sg.get("reference_scale", "output_adjoint"),
            sg.get("block_mode", "per_layer_joint"),
        )

        raw_phases = d.get("phases", [])
        if not isinstance(raw_phases, list):
            raise ConfigError("'phases' must be a list of {steps, preprocessor}")
        phases = [PhaseSpec(int(p["steps"]), p.get("preprocessor", "none")) for p in raw_phases]

        batch_sec = _section(d, "batch")
        val = _section(d, "validation")
        diag = _section(d, "diagnostics")
        ref = _section(d, "reference")
        out = _section(d, "output")

        reference = ReferenceSpec(ref.get("method", "auto"), ref.get("path"))
        if reference.path is not None and not pathlib.Path(reference.path).exists():
            raise ConfigError(f"reference file not found: {reference.path}")

        cfg = cls(
            problem=problem,
            network=network,
            optimizer=optimizer,
            stablegrad=stablegrad,
            phases=phases,
            batch=_sizes(d, "batch"),
            resample_every=int(batch_sec.get("resample_every", 0)),
            validation=ValidationSpec(_sizes(d, "validation"), [int(n) for n in val.get("resolution", [256, 101])]),
            diagnostics=DiagnosticsSpec(
                int(diag.get("every", 0)), _sizes(d, "diagnostics"), int(diag.get("jacobian_cap", 20_000_000))
            ),
            reference=reference,
            output=OutputSpec(str(out.get("dir", "runs/latest")), int(out.get("log_every", 1))),
            seed=int(d.get("seed", 0)),
            sweep_seeds=[int(s) for s in d.get("sweep_seeds", [0, 1, 2])],
        )
        cfg._check()
        return cfg

    def _check(self) -> None:
        if self.resample_every < 0 or self.diagnostics.every < 0 or self.output.log_every < 1:
            raise ConfigError("resample_every and diagnostics.every must be >= 0, output.log_every >= 1")
        if self.problem.kind == "burgers1d" and len(self.validation.resolution) != 2:
            raise ConfigError("burgers1d validation.resolution must be [nx, nt]")
        if self.problem.kind != "burgers1d" and len(self.validation.resolution) != 1:
            raise ConfigError(f"{self.problem.kind} validation.resolution must be [n]")
        if any(n < 2 for n in self.validation.resolution):
            raise ConfigError("validation.resolution entries must be >= 2")
        if self.network.norm is not None:
            raise ConfigError("PDE residuals need derivative channels; network.norm must be null for training")

    @property
    def total_steps(self) -> int:
        return total_steps(self.phases)

    def to_dict(self) -> Dict[str, Any]:
        def sizes(s: BatchSizes) -> Dict[str, int]:
            return {"pde": s.pde, "bc": s.bc, "ic": s.ic}

        p = self.problem
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "sweep_seeds": list(self.sweep_seeds),
            "problem": {
                "kind": p.kind, "nu": p.nu, "k": p.k, "m": p.m,
                "weights": dict(p.weights), "normalize_pde": p.normalize_pde,
            },
            "network": {
                "depth": self.network.depth,
                "width": self.network.width,
                "activation": self.network.activation,
                "norm": self.network.norm,
                "init": {
                    "mode": self.network.init.mode,
                    "gain": self.network.init.gain,
                    "distribution": self.network.init.distribution,
                },
                "fourier": {
                    "enabled": self.network.fourier.enabled,
                    "frequencies": self.network.fourier.frequencies,
                    "include_raw": self.network.fourier.include_raw,
                },
            },
            "optimizer": {
                "kind": self.optimizer.kind,
                "lr": self.optimizer.lr,
                "weight_decay": self.optimizer.weight_decay,
                "schedule": self.optimizer.schedule,
                "warmup_steps": self.optimizer.warmup_steps,
                "multiplier_table": self.optimizer.multiplier_table,
            },
            "stablegrad": {
                "epsilon": self.stablegrad.epsilon,
                "reference_scale": self.stablegrad.reference_scale,
                "block_mode": self.stablegrad.block_mode,
            },
            "phases": [{"steps": ph.steps, "preprocessor": ph.preprocessor} for ph in self.phases],
            "batch": {**sizes(self.batch), "resample_every": self.resample_every},
            "validation": {**sizes(self.validation.sizes), "resolution": list(self.validation.resolution)},
            "diagnostics": {
                "every": self.diagnostics.every,
                **sizes(self.diagnostics.sizes),
                "jacobian_cap": self.diagnostics.jacobian_cap,
            },
            "reference": {"method": self.reference.method, "path": self.reference.path},
            "output": {"dir": self.output.dir, "log_every": self.output.log_every},
        }

    def with_total_steps(self, steps: int) -> 'ExperimentConfig':
        """Copy whose phases are rescaled to ``steps`` in total, keeping their proportions."""
        if steps < 0:
            raise ConfigError(f"--steps-override must be >= 0, got {steps}")
        d = self.to_dict()
        d["phases"] = [{"steps": n, "preprocessor": p.preprocessor}
                       for n, p in zip(split_steps(steps, [p.steps for p in self.phases]), self.phases)]
        return ExperimentConfig.from_dict(d)

    def with_preprocessor(self, preprocessor: str) -> 'ExperimentConfig':
        """Same run with every phase using ``preprocessor``."""
        d = self.to_dict()
        for ph in d["phases"]:
            ph["preprocessor"] = preprocessor
        return ExperimentConfig.from_dict(d)


def split_steps(total: int, weights: Sequence[int]) -> List[int]:
    """Split ``total`` in proportion to ``weights``; the last part takes the remainder."""
    if not weights:
        return []
    weight_sum = sum(weights)
    if weight_sum == 0:
        parts = [0] * len(weights)
        parts[-1] = total
        return parts
    parts = [total * w // weight_sum for w in weights[:-1]]
    parts.append(total - sum(parts))
    return parts


def load_config(
    path: Optional[Union[str, pathlib.Path]] = None,
    preset: Optional[str] = None,
    overrides: Iterable[str] = (),
) -> ExperimentConfig:
    return ExperimentConfig.from_dict(resolve_config_dict(path, preset, overrides))


def save_config(config: Union[ExperimentConfig, Dict[str, Any]], path: Union[str, pathlib.Path]) -> pathlib.Path:
    """Write the config as JSON (or YAML for a .yaml/.yml suffix)."""
    path = pathlib.Path(path)
    data = config.to_dict() if isinstance(config, ExperimentConfig) else config
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        if path.suffix.lower() in ('.yaml', '.yml'):
            yaml.safe_dump(data, f, sort_keys=False)
        else:
            json.dump(data, f, indent=2, ensure_ascii=False)
    return path
