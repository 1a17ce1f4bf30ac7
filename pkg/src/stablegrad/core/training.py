"""Training loop: residual gradient, optional preprocessing, optimizer step.

A Trainer owns the network parameters and optimizer state across phases, so a
later phase continues exactly where the previous one stopped.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from stablegrad.core.diagnostics import r_std_ratio
from stablegrad.core.linalg import SeededRng
from stablegrad.core.network import GradientBlocks, MlpNetwork
from stablegrad.core.optimizers import (
    OPTIMIZER_KINDS,
    PREPROCESSORS,
    AdamWState,
    LrSchedule,
    StableGradConfig,
    adamw_step,
    lr_at,
    sgd_step,
    sigma_reference,
    sign_rescale,
    stablegrad_rescale,
)
from stablegrad.core.residuals import (
    BatchSizes,
    CollocationBatch,
    ProblemSpec,
    ResidualVector,
    assemble_residual,
    sample_batch,
)
from stablegrad.utils.exceptions import (
    ConfigError,
    NonFiniteGradientError,
    NumericalAbortError,
    NumericalOverflowError,
)


@dataclass
class PhaseSpec:
    steps: int
    preprocessor: str = "none"

    def __post_init__(self):
        if int(self.steps) < 0:
            raise ConfigError(f"phase steps must be >= 0, got {self.steps}")
        if self.preprocessor not in PREPROCESSORS:
            raise ConfigError(f"unknown preprocessor '{self.preprocessor}', expected one of {PREPROCESSORS}")


@dataclass
class StepRecord:
    """What one optimizer step saw and did. Losses are at the pre-step parameters."""

    step: int
    phase: int
    preprocessor: str
    lr: float
    loss: float
    losses: Dict[str, float]
    sigma_pre: List[float]
    sigma_post: List[float]
    r_std_pre: float
    r_std_post: float
    sigma_ref: Optional[float]
    update_norm: float
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "step": self.step,
            "phase": self.phase,
            "preprocessor": self.preprocessor,
            "lr": self.lr,
            "loss": self.loss,
            "sigma_pre": self.sigma_pre,
            "sigma_post": self.sigma_post,
            "r_std_pre": self.r_std_pre,
            "r_std_post": self.r_std_post,
            "sigma_ref": self.sigma_ref,
            "update_norm": self.update_norm,
        }
        out.update({f"loss_{label.lower()}": value for label, value in self.losses.items()})
        out.update(self.extra)
        return out


StepHook = Callable[['Trainer', StepRecord], None]


class Trainer:
    """Full-batch PINN training on a collocation batch (resampled every ``resample_every`` steps if > 0)."""

    def __init__(
        self,
        net: MlpNetwork,
        problem: ProblemSpec,
        batch: CollocationBatch,
        schedule: LrSchedule,
        optimizer: str = "adamw",
        weight_decay: float = 0.0,
        stablegrad: Optional[StableGradConfig] = None,
        rng: Optional[SeededRng] = None,
        batch_sizes: Optional[BatchSizes] = None,
        resample_every: int = 0,
    ):
        if optimizer not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer '{optimizer}', expected one of {OPTIMIZER_KINDS}")
        if resample_every and (rng is None or batch_sizes is None):
            raise ConfigError("resampling needs an rng and batch sizes")
        self.net = net
        self.problem = problem
        self.batch = batch
        self.schedule = schedule
        self.optimizer = optimizer
        self.stablegrad = stablegrad or StableGradConfig()
        self.rng = rng
        self.batch_sizes = batch_sizes
        self.resample_every = resample_every
        self.params = net.flat_parameters()
        self.state = AdamWState.zeros(net.parameter_count, weight_decay=weight_decay)
        self.step = 0
        self.last_params: Optional[np.ndarray] = None
        self.last_update: Optional[np.ndarray] = None

    def _preprocess(self, kind: str, grads: GradientBlocks, residuals: ResidualVector):
        if kind == "stablegrad":
            sigma_ref = sigma_reference(
                self.stablegrad.reference_scale, residuals.output_adjoint(), residuals.entries
            )
            return stablegrad_rescale(grads, sigma_ref, self.stablegrad), sigma_ref
        if kind == "sign":
            return sign_rescale(grads), None
        return grads, None

    def _abort(self, message: str, phase: int, preprocessor: str, **details) -> NumericalAbortError:
        record = {"step": self.step, "phase": phase, "preprocessor": preprocessor, "aborted": True, "reason": message}
        record.update(details)
        return NumericalAbortError(f"training aborted at step {self.step}: {message}", record)

    def step_once(self, preprocessor: str = "none", phase: int = 0) -> StepRecord:
        if self.resample_every and self.step > 0 and self.step % self.resample_every == 0:
            self.batch = sample_batch(self.problem, self.batch_sizes, self.rng)
        try:
            residuals = assemble_residual(self.problem, self.net, self.batch)
            loss = residuals.loss()
            if not np.isfinite(loss):
                raise self._abort("non-finite loss", phase, preprocessor, loss=None)
            grads = residuals.gradient(self.net, self.stablegrad.block_mode)
            processed, sigma_ref = self._preprocess(preprocessor, grads, residuals)
        except NumericalOverflowError as e:
            raise self._abort(str(e), phase, preprocessor, layer_index=e.layer_index) from e
        except NonFiniteGradientError as e:
            raise self._abort(str(e), phase, preprocessor, block_index=e.block_index) from e

        lr = lr_at(self.schedule, self.step)
        self.last_params = self.params.copy()
        if self.optimizer == "adamw":
            delta = adamw_step(self.params, processed.flat, self.state, lr)
        else:
            delta = sgd_step(self.params, processed.flat, lr)
        self.net.set_flat_parameters(self.params)
        self.last_update = delta

        sigma_pre = grads.sigmas()
        sigma_post = processed.sigmas()
        record = StepRecord(
            step=self.step,
            phase=phase,
            preprocessor=preprocessor,
            lr=lr,
            loss=loss,
            losses=residuals.component_losses(),
            sigma_pre=sigma_pre,
            sigma_post=sigma_post,
            r_std_pre=r_std_ratio(sigma_pre).value if len(sigma_pre) > 1 else 1.0,
            r_std_post=r_std_ratio(sigma_post).value if len(sigma_post) > 1 else 1.0,
            sigma_ref=sigma_ref,
            update_norm=float(np.linalg.norm(delta)),
        )
        self.step += 1
        return record

    def train_phase(self, steps: int, preprocessor: str = "none", phase: int = 0) -> Iterator[StepRecord]:
        """Yield one record per step; ``steps = 0`` yields nothing and leaves the network alone."""
        for _ in range(steps):
            yield self.step_once(preprocessor, phase)


def run_phases(
    trainer: Trainer,
    phases: Sequence[PhaseSpec],
    on_step: Optional[StepHook] = None,
) -> Iterator[StepRecord]:
    for index, phase in enumerate(phases):
        for record in trainer.train_phase(phase.steps, phase.preprocessor, index):
            if on_step is not None:
                on_step(trainer, record)
            yield record


def total_steps(phases: Sequence[PhaseSpec]) -> int:
    return sum(int(p.steps) for p in phases)
