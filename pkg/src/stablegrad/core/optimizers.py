"""Gradient preprocessors, optimizer steps and learning-rate schedules.

Preprocessors map GradientBlocks to GradientBlocks and are pure. Optimizer
steps update a flat parameter vector in place and return the applied update.
"""
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from stablegrad.core.linalg import DTYPE, empirical_std
from stablegrad.core.network import BLOCK_MODES, GradientBlocks
from stablegrad.utils.exceptions import (
    ConfigError,
    ContractError,
    FileOperationError,
    NonFiniteGradientError,
    ShapeError,
)

REFERENCE_SCALES = ("output_adjoint", "residual_std", "norm_preserving", "inner_product_preserving")
PREPROCESSORS = ("none", "stablegrad", "sign")
SCHEDULE_KINDS = ("constant", "cosine_annealing", "warmup_then_constant", "piecewise_multiplier")
OPTIMIZER_KINDS = ("adamw", "sgd")


@dataclass
class StableGradConfig:
    epsilon: float = 1e-12
    reference_scale: str = "output_adjoint"
    block_mode: str = "per_layer_joint"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"stablegrad.epsilon must be positive, got {self.epsilon}")
        if self.reference_scale not in REFERENCE_SCALES:
            raise ConfigError(
                f"unknown reference scale '{self.reference_scale}', expected one of {REFERENCE_SCALES}"
            )
        if self.block_mode not in BLOCK_MODES:
            raise ConfigError(f"unknown block mode '{self.block_mode}', expected one of {BLOCK_MODES}")


@dataclass
class AlphaBlocks:
    """Block-diagonal scaling ``P = diag(alpha_1 I_1, ..., alpha_L I_L)``."""

    alphas: np.ndarray
    slices: List[slice]
    reference: float = 1.0

    @classmethod
    def uniform(cls, value: float, slices: Sequence[slice]) -> 'AlphaBlocks':
        return cls(np.full(len(slices), float(value), dtype=DTYPE), list(slices), float(value))

    def diagonal(self, size: int) -> np.ndarray:
        diag = np.zeros(size, dtype=DTYPE)
        for a, s in zip(self.alphas, self.slices):
            diag[s] = a
        return diag

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``P v`` along the last axis."""
        out = np.array(v, dtype=DTYPE, copy=True)
        for a, s in zip(self.alphas, self.slices):
            out[..., s] *= a
        return out


def _check_finite_blocks(grads: GradientBlocks) -> None:
    for i, block in enumerate(grads.blocks()):
        if not np.all(np.isfinite(block)):
            label = grads.layout.block_labels(grads.block_mode)[i]
            raise NonFiniteGradientError(f"non-finite gradient in block {i} ({label})", block_index=i)


def reference_scale(
    kind: str,
    sigma_ref: float,
    block_sq_norms: np.ndarray,
    sigmas: np.ndarray,
    epsilon: float,
) -> float:
    """Reference scale ``c`` for ``alpha_l = c / (sigma_l + eps)``.

    ``output_adjoint`` and ``residual_std`` return ``sigma_ref`` unchanged;
    the other two are chosen so that ``|g~| = |g|`` or ``g . g~ = |g|^2``.
    """
    if kind in ("output_adjoint", "residual_std"):
        return float(sigma_ref)
    total = float(block_sq_norms.sum())
    if total == 0.0:
        return 0.0
    shifted = sigmas + epsilon
    if kind == "norm_preserving":
        return math.sqrt(total / float(np.sum(block_sq_norms / shifted ** 2)))
    if kind == "inner_product_preserving":
        return total / float(np.sum(block_sq_norms / shifted))
    raise ConfigError(f"unknown reference scale '{kind}'")


def sigma_reference(kind: str, output_adjoint: np.ndarray, residual: np.ndarray) -> float:
    """Std the ``output_adjoint``/``residual_std`` scales rescale to.

    The two preserving variants ignore it; the output-adjoint std is returned for them.
    """
    if kind == "residual_std":
        return empirical_std(residual)
    return empirical_std(output_adjoint)


def stablegrad_alphas(grads: GradientBlocks, sigma_ref: float, cfg: StableGradConfig) -> AlphaBlocks:
    if sigma_ref < 0 or not np.isfinite(sigma_ref):
        raise ContractError(f"reference std must be finite and >= 0, got {sigma_ref}")
    grads = grads.with_mode(cfg.block_mode)
    _check_finite_blocks(grads)
    blocks = grads.blocks()
    sigmas = np.asarray(grads.sigmas(), dtype=DTYPE)
    sq_norms = np.asarray([float(b @ b) for b in blocks], dtype=DTYPE)
    c = reference_scale(cfg.reference_scale, sigma_ref, sq_norms, sigmas, cfg.epsilon)
    return AlphaBlocks(c / (sigmas + cfg.epsilon), grads.layout.block_slices(cfg.block_mode), c)


def stablegrad_rescale(grads: GradientBlocks, sigma_ref: float, cfg: Optional[StableGradConfig] = None) -> GradientBlocks:
    """Rescale every block to the reference std: ``g~_l = c / (sigma_l + eps) * g_l``."""
    cfg = cfg or StableGradConfig()
    alphas = stablegrad_alphas(grads, sigma_ref, cfg)
    return GradientBlocks(alphas.apply(grads.flat), grads.layout, cfg.block_mode)


def sign_rescale(grads: GradientBlocks) -> GradientBlocks:
    return grads.with_flat(np.sign(grads.flat))


# ---------------------------------------------------------------------------
# Optimizer steps
# ---------------------------------------------------------------------------

def _check_shapes(params: np.ndarray, grads: np.ndarray) -> None:
    if params.shape != grads.shape:
        raise ShapeError(f"parameter shape {params.shape} does not match gradient shape {grads.shape}")


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """``theta <- theta - lr * g`` in place; returns the update."""
    grads = np.asarray(grads, dtype=DTYPE)
    _check_shapes(params, grads)
    delta = -lr * grads
    params += delta
    return delta


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros(cls, size: int, weight_decay: float = 0.0, **kwargs) -> 'AdamWState':
        return cls(np.zeros(size, dtype=DTYPE), np.zeros(size, dtype=DTYPE), weight_decay=weight_decay, **kwargs)

    def copy(self) -> 'AdamWState':
        return AdamWState(
            self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps, self.weight_decay
        )


def adamw_step(params: np.ndarray, grads: np.ndarray, state: AdamWState, lr: float) -> np.ndarray:
    """Bias-corrected Adam update plus decoupled weight decay, in place; returns the update."""
    grads = np.asarray(grads, dtype=DTYPE)
    _check_shapes(params, grads)
    if state.m.shape != params.shape or state.v.shape != params.shape:
        raise ShapeError(f"optimizer state shape {state.m.shape} does not match parameters {params.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    delta = -lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay:
        delta -= lr * state.weight_decay * params
    params += delta
    return delta


# ---------------------------------------------------------------------------
# Learning-rate schedules
# ---------------------------------------------------------------------------

@dataclass
class MultiplierInterval:
    start_epoch: int
    end_epoch: int
    multiplier: float


@dataclass
class LrSchedule:
    """Base learning rate times a step-dependent factor.

    Piecewise tables are indexed by epoch (1-based); step ``s`` of a run with
    ``total_steps`` steps falls in epoch ``floor(s * total_epochs / total_steps) + 1``.
    """

    kind: str = "constant"
    base_lr: float = 1e-3
    total_steps: int = 0
    warmup_steps: int = 0
    intervals: List[MultiplierInterval] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule '{self.kind}', expected one of {SCHEDULE_KINDS}")
        if not self.base_lr >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.base_lr}")
        if self.kind == "warmup_then_constant" and self.warmup_steps < 1:
            raise ConfigError("warmup_then_constant needs warmup_steps >= 1")
        if self.kind == "piecewise_multiplier":
            if not self.intervals:
                raise ConfigError("piecewise_multiplier schedule needs a multiplier table")
            for iv in self.intervals:
                if not iv.multiplier > 0:
                    raise ConfigError(f"multipliers must be positive, got {iv.multiplier}")

    @property
    def total_epochs(self) -> int:
        return max(iv.end_epoch for iv in self.intervals) if self.intervals else 0

    def epoch_of(self, step: int) -> int:
        if self.total_steps <= 0:
            return 1
        epoch = step * self.total_epochs // self.total_steps + 1
        return min(epoch, self.total_epochs)

    def multiplier_at_epoch(self, epoch: int) -> float:
        for iv in self.intervals:
            if iv.start_epoch <= epoch <= iv.end_epoch:
                return iv.multiplier
        raise ConfigError(f"multiplier table does not cover epoch {epoch}")


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 0 or (schedule.total_steps > 0 and step > schedule.total_steps):
        raise ConfigError(f"step {step} is outside the run (0..{schedule.total_steps})")
    base = schedule.base_lr
    if schedule.kind == "constant":
        return base
    if schedule.kind == "cosine_annealing":
        if schedule.total_steps <= 0:
            return base
        return base * 0.5 * (1.0 + math.cos(math.pi * step / schedule.total_steps))
    if schedule.kind == "warmup_then_constant":
        return base * min(1.0, (step + 1) / schedule.warmup_steps)
    return base * schedule.multiplier_at_epoch(schedule.epoch_of(step))


def default_multiplier_table() -> Path:
    return Path(str(resources.files("stablegrad") / "data" / "lr_multipliers.csv"))


def load_multiplier_table(path: Optional[Union[str, Path]] = None) -> List[MultiplierInterval]:
    """Read ``start_epoch,end_epoch,multiplier`` rows; the bundled table by default."""
    path = Path(path) if path is not None else default_multiplier_table()
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FileOperationError(f"Could not read multiplier table {path}: {e}") from e
    missing = {"start_epoch", "end_epoch", "multiplier"} - set(frame.columns)
    if missing:
        raise ConfigError(f"multiplier table {path} is missing columns {sorted(missing)}")
    frame = frame.sort_values("start_epoch")
    intervals = [
        MultiplierInterval(int(row.start_epoch), int(row.end_epoch), float(row.multiplier))
        for row in frame.itertuples(index=False)
    ]
    _check_coverage(intervals, path)
    return intervals


def _check_coverage(intervals: List[MultiplierInterval], source) -> None:
    expected = 1
    for iv in intervals:
        if iv.start_epoch != expected or iv.end_epoch < iv.start_epoch:
            raise ConfigError(f"multiplier table {source} has a gap or overlap at epoch {expected}")
        if not iv.multiplier > 0:
            raise ConfigError(f"multiplier table {source} has a non-positive multiplier at epoch {iv.start_epoch}")
        expected = iv.end_epoch + 1


def multipliers_from_diagnostics(rows: Sequence[Dict[str, float]]) -> List[MultiplierInterval]:
    """Per-interval ``lambda_max(K_SG) / lambda_max(K)`` from checkpoint rows.

    Rows need ``epoch``, ``lambda_max_k`` and ``lambda_max_ksg``. Each interval
    ends at a checkpoint and uses that checkpoint's ratio, so the initial
    checkpoint only serves as the left edge of the first interval.
    """
    ordered = sorted(rows, key=lambda r: r["epoch"])
    if len(ordered) < 2:
        raise ConfigError("need at least two diagnostic checkpoints to derive multipliers")
    intervals = []
    for prev, cur in zip(ordered[:-1], ordered[1:]):
        if cur["lambda_max_k"] <= 0:
            raise ConfigError(f"lambda_max(K) is zero at epoch {cur['epoch']}")
        ratio = cur["lambda_max_ksg"] / cur["lambda_max_k"]
        intervals.append(MultiplierInterval(int(prev["epoch"]) + 1, int(cur["epoch"]), float(ratio)))
    intervals[0].start_epoch = 1
    _check_coverage(intervals, "from diagnostics")
    return intervals


def multiplier_frame(intervals: Sequence[MultiplierInterval]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"start_epoch": iv.start_epoch, "end_epoch": iv.end_epoch, "multiplier": iv.multiplier} for iv in intervals]
    )
