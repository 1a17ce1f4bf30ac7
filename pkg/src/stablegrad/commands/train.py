#!/usr/bin/env python3
"""
train - Train a PINN on one benchmark with the configured phases.

Writes metrics.jsonl (one record per logged step), timings.jsonl,
checkpoint.npz, summary.json and, when diagnostics are enabled, table2.csv.
"""
import argparse
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from stablegrad.commands.common import add_common_args, output_dir, resolve_config
from stablegrad.core.config import ExperimentConfig
from stablegrad.core.diagnostics import KernelDiagnostics, kernel_diagnostics
from stablegrad.core.linalg import SeededRng
from stablegrad.core.reference import GriddedField, load_reference
from stablegrad.core.residuals import assemble_residual, reference_field, sample_batch, validation_summary
from stablegrad.core.training import StepRecord, Trainer, run_phases
from stablegrad.utils import (
    handle_cli_errors,
    NumericalAbortError,
    log_debug,
    log_info,
    log_success,
    MetricsWriter,
    write_json,
    write_table,
)

# Child-stream keys of the run seed.
RNG_INIT = 1
RNG_TRAIN = 2
RNG_VALID = 3
RNG_DIAG = 4
RNG_RESAMPLE = 5
RNG_POWER = 6

DIAGNOSTICS_TABLE = "table2.csv"

DIAGNOSTIC_COLUMNS = [
    "epoch", "val_loss", "rho", "rho_sg", "s_sg", "margin_sg", "e_lin",
    "r_std_raw", "r_std_scaled", "lambda_max_k", "lambda_max_ksg", "eta", "converged",
]


@dataclass
class RunResult:
    out_dir: Path
    summary: Dict[str, Any]
    trainer: Trainer
    diagnostics: List[KernelDiagnostics] = field(default_factory=list)
    last_record: Optional[StepRecord] = None


def build_reference(cfg: ExperimentConfig) -> GriddedField:
    if cfg.reference.path is not None:
        return load_reference(cfg.reference.path)
    return reference_field(cfg.problem, cfg.validation.resolution, cfg.reference.method)


class DiagnosticsHook:
    """Kernel diagnostics every ``every`` steps (and at the last step) on a fixed batch."""

    def __init__(self, cfg: ExperimentConfig, rng: SeededRng, val_batch, writer: MetricsWriter):
        self.cfg = cfg
        self.batch = sample_batch(cfg.problem, cfg.diagnostics.sizes, rng.spawn(RNG_DIAG))
        self.val_batch = val_batch
        self.power_rng = rng.spawn(RNG_POWER)
        self.writer = writer
        self.last_step = cfg.total_steps - 1
        self.rows: List[KernelDiagnostics] = []

    def __call__(self, trainer: Trainer, record: StepRecord) -> None:
        every = self.cfg.diagnostics.every
        if record.step % every != 0 and record.step != self.last_step:
            return
        net = trainer.net.copy()
        net.set_flat_parameters(trainer.last_params)
        val_loss = assemble_residual(self.cfg.problem, net, self.val_batch).loss()
        diag = kernel_diagnostics(
            net,
            self.cfg.problem,
            self.batch,
            self.cfg.stablegrad,
            eta=record.lr,
            rng=self.power_rng.spawn(record.step),
            epoch=record.step,
            delta_theta=trainer.last_update,
            val_loss=val_loss,
            cap=self.cfg.diagnostics.jacobian_cap,
        )
        self.rows.append(diag)
        self.writer.write({"record": "diagnostics", "step": record.step, **diag.to_dict()})
        log_debug(
            f"step {record.step}: rho={diag.rho:.4g} rho_sg={diag.rho_sg:.4g} "
            f"s_sg={diag.s_sg:.4g} margin={diag.margin_sg:.4g}"
        )


def run_train(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> RunResult:
    """Execute every phase of ``cfg`` and write the run directory."""
    out_dir = Path(out_dir) if out_dir is not None else output_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(cfg.seed)
    problem = cfg.problem
    net = cfg.network.build(problem.input_dim, rng.spawn(RNG_INIT))
    batch = sample_batch(problem, cfg.batch, rng.spawn(RNG_TRAIN))
    val_batch = sample_batch(problem, cfg.validation.sizes, rng.spawn(RNG_VALID))
    trainer = Trainer(
        net,
        problem,
        batch,
        cfg.optimizer.lr_schedule(cfg.total_steps),
        optimizer=cfg.optimizer.kind,
        weight_decay=cfg.optimizer.weight_decay,
        stablegrad=cfg.stablegrad,
        rng=rng.spawn(RNG_RESAMPLE),
        batch_sizes=cfg.batch,
        resample_every=cfg.resample_every,
    )
    log_info(
        f"{problem.kind}: {net.parameter_count} parameters, "
        f"{len(cfg.phases)} phase(s), {cfg.total_steps} steps, seed {cfg.seed}"
    )

    result = RunResult(out_dir, {}, trainer)
    log_every = cfg.output.log_every
    progress_every = max(1, cfg.total_steps // 10)
    phase_start: Dict[int, float] = {}
    with MetricsWriter(out_dir / "metrics.jsonl") as writer, \
            MetricsWriter(out_dir / "timings.jsonl") as timings:
        hook = DiagnosticsHook(cfg, rng, val_batch, writer) if cfg.diagnostics.every > 0 else None
        started = time.perf_counter()
        try:
            for record in run_phases(trainer, cfg.phases, hook):
                phase_start.setdefault(record.phase, time.perf_counter())
                result.last_record = record
                if record.step % log_every == 0 or record.step == cfg.total_steps - 1:
                    writer.write({"record": "step", **record.to_dict()})
                if (record.step + 1) % progress_every == 0:
                    log_info(f"step {record.step + 1}/{cfg.total_steps} loss {record.loss:.4e}")
        except NumericalAbortError as e:
            writer.write({"record": "abort", **e.record})
            raise
        finally:
            for phase, start in sorted(phase_start.items()):
                timings.write({"phase": phase, "started_s": start - started})
            timings.write({"phase": "total", "seconds": time.perf_counter() - started})
        if hook is not None:
            result.diagnostics = hook.rows

    np.savez(out_dir / "checkpoint.npz", params=trainer.params, step=trainer.step)
    summary = validation_summary(problem, trainer.net, val_batch, build_reference(cfg))
    summary.update({
        "problem": problem.kind,
        "seed": cfg.seed,
        "steps": trainer.step,
        "train_loss": result.last_record.loss if result.last_record is not None else None,
        "parameters": net.parameter_count,
    })
    write_json(out_dir / "summary.json", summary)
    if result.diagnostics:
        write_table(out_dir / DIAGNOSTICS_TABLE, [d.to_dict() for d in result.diagnostics], DIAGNOSTIC_COLUMNS)
    result.summary = summary
    log_success(
        f"done: val_loss {summary['val_loss']:.4e}, relative L2 {summary['relative_l2']:.4e} -> {out_dir}"
    )
    return result


@handle_cli_errors
def main(argv=None):
    parser = argparse.ArgumentParser(
        prog='stablegrad train',
        description='Train a PINN with the configured optimizer phases',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
Examples:
  stablegrad train --preset burgers-desk --out runs/burgers
  stablegrad train --preset poisson-desk --seed 3 --steps-override 500
  stablegrad train --config exp.yaml --set optimizer.lr=5e-4
'''
    )
    add_common_args(parser)
    args = parser.parse_args(argv)
    cfg = resolve_config(args)
    run_train(cfg)
    return 0


if __name__ == '__main__':
    main()
