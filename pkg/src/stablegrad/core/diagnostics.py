"""Effective-kernel diagnostics built on explicit residual Jacobians.

``K = J J^T`` is the empirical kernel and ``K_SG = J P J^T`` the kernel seen by
a StableGrad step with ``P = diag(alpha_l I_l)``. Rayleigh quotients are formed
matrix-free from block gradients; dominant eigenvalues come from power
iteration in residual space.
"""
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from stablegrad.core.linalg import DTYPE, SeededRng, power_iteration
from stablegrad.core.network import GradientBlocks, MlpNetwork
from stablegrad.core.optimizers import (
    AlphaBlocks,
    StableGradConfig,
    sigma_reference,
    stablegrad_alphas,
)
from stablegrad.core.residuals import CollocationBatch, ProblemSpec, ResidualVector, assemble_residual
from stablegrad.utils.exceptions import ConfigError, ContractError, ConvergenceError, DomainError
from stablegrad.utils.logging import log_warning

DEFAULT_JACOBIAN_CAP = 20_000_000
VALID_BLOCK_FLOOR = 1e-8
LINEARIZATION_EPS = 1e-12


@dataclass
class JacobianBlocks:
    """Dense ``J = dr/dtheta`` split into parameter blocks ``[J_1, ..., J_L]``."""

    matrix: np.ndarray
    residual: np.ndarray
    slices: List[slice]
    labels: List[str]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def blocks(self) -> List[np.ndarray]:
        return [self.matrix[:, s] for s in self.slices]

    def gradient(self) -> np.ndarray:
        """``J^T r``, the gradient of ``0.5 * |r|^2``."""
        return self.matrix.T @ self.residual

    def kernel(self, alphas: Optional[AlphaBlocks] = None) -> np.ndarray:
        if alphas is None:
            return self.matrix @ self.matrix.T
        return alphas.apply(self.matrix) @ self.matrix.T


def jacobian_from_residuals(
    net: MlpNetwork,
    residuals: ResidualVector,
    block_mode: str = "per_layer_joint",
    cap: int = DEFAULT_JACOBIAN_CAP,
) -> JacobianBlocks:
    _check_cap(residuals.size, net.parameter_count, cap)
    return JacobianBlocks(
        residuals.jacobian(net),
        residuals.entries,
        net.layout.block_slices(block_mode),
        net.layout.block_labels(block_mode),
    )


def _check_cap(rows: int, cols: int, cap: int) -> None:
    if rows * cols > cap:
        raise ConfigError(
            f"Jacobian would have {rows} x {cols} = {rows * cols} entries, above the cap of {cap}; "
            "use a smaller diagnostic batch"
        )


def assemble_jacobian(
    net: MlpNetwork,
    problem: ProblemSpec,
    batch: CollocationBatch,
    block_mode: str = "per_layer_joint",
    cap: int = DEFAULT_JACOBIAN_CAP,
) -> JacobianBlocks:
    _check_cap(sum(batch.sizes.values()), net.parameter_count, cap)
    return jacobian_from_residuals(net, assemble_residual(problem, net, batch), block_mode, cap)


def _residual_norm_sq(r: np.ndarray) -> float:
    n2 = float(r @ r)
    if n2 == 0.0:
        raise DomainError("Rayleigh quotient of a zero residual")
    return n2


def rayleigh(kernel: np.ndarray, r: np.ndarray) -> float:
    """Dense ``r^T A r / |r|^2``."""
    r = np.asarray(r, dtype=DTYPE)
    return float(r @ (kernel @ r)) / _residual_norm_sq(r)


def rayleigh_k(jac: JacobianBlocks) -> float:
    """``|J^T r|^2 / |r|^2``."""
    g = jac.gradient()
    return float(g @ g) / _residual_norm_sq(jac.residual)


def rayleigh_ksg(jac: JacobianBlocks, alphas: AlphaBlocks) -> float:
    """``sum_l alpha_l |g_l|^2 / |r|^2`` with ``g_l = J_l^T r``."""
    g = jac.gradient()
    total = sum(a * float(g[s] @ g[s]) for a, s in zip(alphas.alphas, alphas.slices))
    return total / _residual_norm_sq(jac.residual)


def lambda_max_k(jac: JacobianBlocks, rng: SeededRng, tol: float = 1e-10, max_iter: int = 5000) -> float:
    J = jac.matrix
    return power_iteration(lambda v: J @ (J.T @ v), jac.rows, rng, tol=tol, max_iter=max_iter)


def lambda_max_ksg(
    jac: JacobianBlocks,
    alphas: AlphaBlocks,
    rng: SeededRng,
    tol: float = 1e-10,
    max_iter: int = 5000,
) -> float:
    """Power iteration on ``v -> J (P (J^T v))``."""
    J = jac.matrix
    return power_iteration(lambda v: J @ alphas.apply(J.T @ v), jac.rows, rng, tol=tol, max_iter=max_iter)


@dataclass
class TheoremMargin:
    s_sg: float
    margin: float


def theorem_margin(rho: float, rho_sg: float, lambda_max_ksg: float, eta: float) -> TheoremMargin:
    s_sg = eta * lambda_max_ksg
    return TheoremMargin(s_sg, rho_sg * (1.0 - 0.5 * s_sg) - rho)


def linearization_error(
    net: MlpNetwork,
    problem: ProblemSpec,
    batch: CollocationBatch,
    delta_theta: np.ndarray,
    jac: Optional[JacobianBlocks] = None,
    eps: float = LINEARIZATION_EPS,
) -> float:
    """``|r(theta + d) - r(theta) - J d| / (|r(theta + d) - r(theta)| + eps)``."""
    delta_theta = np.asarray(delta_theta, dtype=DTYPE)
    if delta_theta.shape != (net.parameter_count,):
        raise ContractError(f"update has shape {delta_theta.shape}, network has {net.parameter_count} parameters")
    if jac is None:
        jac = assemble_jacobian(net, problem, batch)
    moved = net.copy()
    moved.set_flat_parameters(net.flat_parameters() + delta_theta)
    change = assemble_residual(problem, moved, batch).entries - jac.residual
    miss = change - jac.matrix @ delta_theta
    return float(np.linalg.norm(miss)) / (float(np.linalg.norm(change)) + eps)


@dataclass
class DecreaseCheck:
    delta_std: float
    delta_sg: float
    rho: float
    rho_sg: float
    lambda_max_ksg: float
    s_sg: float
    margin: float
    theorem_holds: bool
    decrease_holds: bool


def _quadratic_decrease(kernel: np.ndarray, r: np.ndarray, eta: float) -> float:
    a = kernel @ r
    return eta * float(r @ a) - 0.5 * eta * eta * float(a @ a)


def local_decrease_check(
    J: np.ndarray,
    alphas: Union[AlphaBlocks, np.ndarray],
    r: np.ndarray,
    eta: float,
) -> DecreaseCheck:
    """Exact one-step decrease ``eta r^T A r - eta^2/2 |A r|^2`` for ``A = K`` and ``A = K_SG``.

    ``alphas`` is either AlphaBlocks or the diagonal of ``P`` as a vector.
    """
    J = np.asarray(J, dtype=DTYPE)
    r = np.asarray(r, dtype=DTYPE)
    diag = alphas.diagonal(J.shape[1]) if isinstance(alphas, AlphaBlocks) else np.asarray(alphas, dtype=DTYPE)
    K = J @ J.T
    K_sg = (J * diag) @ J.T
    rho = rayleigh(K, r)
    rho_sg = rayleigh(K_sg, r)
    lam = float(np.linalg.eigvalsh(K_sg)[-1])
    tm = theorem_margin(rho, rho_sg, lam, eta)
    delta_std = _quadratic_decrease(K, r, eta)
    delta_sg = _quadratic_decrease(K_sg, r, eta)
    return DecreaseCheck(
        delta_std=delta_std,
        delta_sg=delta_sg,
        rho=rho,
        rho_sg=rho_sg,
        lambda_max_ksg=lam,
        s_sg=tm.s_sg,
        margin=tm.margin,
        theorem_holds=bool(tm.s_sg < 2.0 and tm.margin > 0.0),
        decrease_holds=bool(delta_sg > delta_std),
    )


@dataclass
class StdRatio:
    value: float
    infinite: bool = False


def r_std_ratio(grads: Union[GradientBlocks, Sequence[float]]) -> StdRatio:
    """Largest over smallest per-block gradient std; infinite (flagged) when a block is constant."""
    sigmas = grads.sigmas() if isinstance(grads, GradientBlocks) else [float(s) for s in grads]
    if len(sigmas) < 2:
        raise ContractError(f"R_std needs at least two blocks, got {len(sigmas)}")
    low, high = min(sigmas), max(sigmas)
    if low == 0.0:
        return StdRatio(float("inf"), True)
    return StdRatio(high / low)


@dataclass
class UpdateGeometry:
    valid_relative_update_ratio: float
    max_energy_concentration: float
    valid_blocks: int


def update_geometry(
    params_before: np.ndarray,
    delta: np.ndarray,
    slices: Sequence[slice],
    floor: float = VALID_BLOCK_FLOOR,
) -> UpdateGeometry:
    """Spread of an update across parameter blocks.

    The relative-update ratio compares ``|d_l| / |theta_l|`` across blocks with
    ``|theta_l| >= floor``; the concentration is ``max_l |d_l|^2 / sum_l |d_l|^2``.
    """
    rel = []
    energy = []
    for s in slices:
        d2 = float(delta[s] @ delta[s])
        energy.append(d2)
        theta = float(np.linalg.norm(params_before[s]))
        if theta >= floor:
            rel.append(np.sqrt(d2) / theta)
    if not rel:
        raise DomainError("every parameter block is below the validity floor")
    total = sum(energy)
    if total == 0.0:
        raise DomainError("update has zero energy")
    low = min(rel)
    ratio = float("inf") if low == 0.0 else max(rel) / low
    return UpdateGeometry(ratio, max(energy) / total, len(rel))


@dataclass
class KernelDiagnostics:
    """One diagnostic checkpoint, in the column order of the checkpoint table."""

    epoch: int
    val_loss: Optional[float]
    rho: float
    rho_sg: float
    lambda_max_k: float
    lambda_max_ksg: float
    s_sg: float
    margin_sg: float
    e_lin: Optional[float]
    r_std_raw: float
    r_std_scaled: float
    eta: float
    converged: bool = True

    @property
    def spectral_ratio(self) -> float:
        return self.lambda_max_ksg / self.lambda_max_k if self.lambda_max_k > 0 else float("inf")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def _lambda_or_estimate(fn, *args) -> tuple:
    try:
        return fn(*args), True
    except ConvergenceError as e:
        log_warning(f"{e}; keeping the last estimate")
        return (e.estimate if e.estimate is not None else float("nan")), False


def kernel_diagnostics(
    net: MlpNetwork,
    problem: ProblemSpec,
    batch: CollocationBatch,
    cfg: StableGradConfig,
    eta: float,
    rng: SeededRng,
    epoch: int = 0,
    delta_theta: Optional[np.ndarray] = None,
    val_loss: Optional[float] = None,
    cap: int = DEFAULT_JACOBIAN_CAP,
) -> KernelDiagnostics:
    """Every kernel quantity at the current parameters on a fixed batch.

    ``alpha`` comes from the batch's own gradient; ``delta_theta`` is the update
    actually taken from these parameters (``e_lin`` is None without it).
    """
    residuals = assemble_residual(problem, net, batch)
    jac = jacobian_from_residuals(net, residuals, cfg.block_mode, cap)
    grads = GradientBlocks(jac.gradient(), net.layout, cfg.block_mode)
    sigma_ref = sigma_reference(cfg.reference_scale, residuals.output_adjoint(), residuals.entries)
    alphas = stablegrad_alphas(grads, sigma_ref, cfg)
    scaled = grads.with_flat(alphas.apply(grads.flat))

    rho = rayleigh_k(jac)
    rho_sg = rayleigh_ksg(jac, alphas)
    lam_k, ok_k = _lambda_or_estimate(lambda_max_k, jac, rng.spawn(1))
    lam_sg, ok_sg = _lambda_or_estimate(lambda_max_ksg, jac, alphas, rng.spawn(2))
    tm = theorem_margin(rho, rho_sg, lam_sg, eta)
    e_lin = None
    if delta_theta is not None:
        e_lin = linearization_error(net, problem, batch, delta_theta, jac)
    return KernelDiagnostics(
        epoch=epoch,
        val_loss=val_loss,
        rho=rho,
        rho_sg=rho_sg,
        lambda_max_k=lam_k,
        lambda_max_ksg=lam_sg,
        s_sg=tm.s_sg,
        margin_sg=tm.margin,
        e_lin=e_lin,
        r_std_raw=r_std_ratio(grads).value,
        r_std_scaled=r_std_ratio(scaled).value,
        eta=eta,
        converged=ok_k and ok_sg,
    )
