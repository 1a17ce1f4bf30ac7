"""Unit tests for stablegrad.core.diagnostics module."""
import numpy as np
import pytest

from stablegrad.core.diagnostics import (
    JacobianBlocks,
    assemble_jacobian,
    jacobian_from_residuals,
    kernel_diagnostics,
    lambda_max_k,
    lambda_max_ksg,
    linearization_error,
    local_decrease_check,
    r_std_ratio,
    rayleigh,
    rayleigh_k,
    rayleigh_ksg,
    theorem_margin,
    update_geometry,
)
from stablegrad.core.linalg import SeededRng
from stablegrad.core.network import GradientBlocks
from stablegrad.core.optimizers import AlphaBlocks, StableGradConfig, stablegrad_rescale
from stablegrad.core.residuals import BatchSizes, ProblemSpec, assemble_residual, sample_batch
from stablegrad.utils.exceptions import ConfigError, ContractError, DomainError

SMALL = BatchSizes(pde=12, bc=6, ic=6)
POISSON = ProblemSpec("poisson2d")


def _random_instance(rng: SeededRng, rows: int, blocks: int, max_block: int = 6):
    """Random J split into blocks, residual r and log-uniform alphas."""
    sizes = [int(s) for s in rng.generator.integers(1, max_block + 1, size=blocks)]
    bounds = np.cumsum([0] + sizes)
    slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    scales = 10.0 ** rng.uniform(-2.0, 2.0, blocks)
    J = np.concatenate([rng.normal((rows, n)) * s for n, s in zip(sizes, scales)], axis=1)
    r = rng.normal(rows)
    alphas = AlphaBlocks(10.0 ** rng.uniform(-2.0, 2.0, blocks), slices)
    jac = JacobianBlocks(J, r, slices, [f"layer{i}" for i in range(blocks)])
    return jac, alphas


@pytest.fixture
def poisson_setup(make_net):
    net = make_net(input_dim=2, depth=2, width=4, seed=3)
    batch = sample_batch(POISSON, SMALL, SeededRng(10))
    return net, batch


class TestJacobian:
    """Tests for Jacobian assembly."""

    def test_transpose_residual_is_gradient(self, poisson_setup):
        """J^T r reproduces the loss gradient."""
        net, batch = poisson_setup
        residuals = assemble_residual(POISSON, net, batch)
        jac = jacobian_from_residuals(net, residuals)
        assert jac.rows == residuals.size
        np.testing.assert_allclose(jac.gradient(), residuals.gradient(net).flat, rtol=1e-10, atol=1e-12)
        assert len(jac.blocks()) == len(net.layers)

    def test_cap_exceeded(self, poisson_setup):
        """Oversized Jacobians ask for a smaller batch."""
        net, batch = poisson_setup
        with pytest.raises(ConfigError, match="smaller diagnostic batch"):
            assemble_jacobian(net, POISSON, batch, cap=10)

    def test_block_kernel_sum(self):
        """J P J^T equals sum_l alpha_l J_l J_l^T."""
        rng = SeededRng(0)
        for _ in range(20):
            jac, alphas = _random_instance(rng, 10, 4)
            expected = sum(a * b @ b.T for a, b in zip(alphas.alphas, jac.blocks()))
            np.testing.assert_allclose(jac.kernel(alphas), expected, rtol=1e-10, atol=1e-10)


class TestRayleigh:
    """Tests for the residual Rayleigh quotients."""

    def test_identity_kernel(self):
        """Identity kernel has quotient one."""
        assert rayleigh(np.eye(3), np.array([1.0, 2.0, 3.0])) == pytest.approx(1.0)

    def test_zero_residual(self):
        """A zero residual has no quotient."""
        with pytest.raises(DomainError):
            rayleigh(np.eye(2), np.zeros(2))

    def test_matrix_free_matches_dense(self):
        """Matrix-free quotients match the dense kernel."""
        rng = SeededRng(1)
        for _ in range(20):
            jac, alphas = _random_instance(rng, 15, 3)
            assert rayleigh_k(jac) == pytest.approx(rayleigh(jac.kernel(), jac.residual), rel=1e-10)
            assert rayleigh_ksg(jac, alphas) == pytest.approx(rayleigh(jac.kernel(alphas), jac.residual), rel=1e-10)

    def test_unit_alphas_leave_quotient_unchanged(self):
        """Unit multipliers give rho_SG == rho."""
        jac, _ = _random_instance(SeededRng(2), 8, 3)
        ones = AlphaBlocks.uniform(1.0, jac.slices)
        assert rayleigh_ksg(jac, ones) == pytest.approx(rayleigh_k(jac), rel=1e-14)

    def test_difference_identity(self):
        """Dense r^T (J P J^T - J J^T) r / |r|^2 equals sum_l (alpha_l - 1) |J_l^T r|^2 / |r|^2."""
        rng = SeededRng(3)
        for _ in range(100):
            jac, alphas = _random_instance(rng, int(rng.generator.integers(2, 30)), int(rng.generator.integers(1, 5)))
            J, r = jac.matrix, jac.residual
            P = np.diag(alphas.diagonal(J.shape[1]))
            r2 = float(r @ r)
            k_sg = r @ (J @ P @ J.T) @ r / r2
            k = r @ (J @ J.T) @ r / r2
            dense = r @ (J @ P @ J.T - J @ J.T) @ r / r2
            by_blocks = sum((a - 1.0) * float(np.sum((J[:, s].T @ r) ** 2))
                            for a, s in zip(alphas.alphas, alphas.slices)) / r2
            tol = 1e-10 * (k + k_sg)
            assert abs(dense - by_blocks) <= tol
            assert abs((rayleigh_ksg(jac, alphas) - rayleigh_k(jac)) - dense) <= tol


class TestSpectralRadius:
    """Tests for lambda_max of K and K_SG."""

    def test_matches_dense_eigensolver(self):
        """Power iteration agrees with eigvalsh."""
        rng = SeededRng(4)
        for _ in range(10):
            jac, alphas = _random_instance(rng, 20, 4, max_block=8)
            dense_k = np.linalg.eigvalsh(jac.kernel())[-1]
            dense_sg = np.linalg.eigvalsh(0.5 * (jac.kernel(alphas) + jac.kernel(alphas).T))[-1]
            assert lambda_max_k(jac, rng.spawn(1), tol=1e-13, max_iter=200000) == pytest.approx(dense_k, rel=1e-6)
            assert lambda_max_ksg(jac, alphas, rng.spawn(2), tol=1e-13, max_iter=200000) == pytest.approx(
                dense_sg, rel=1e-6
            )

    def test_uniform_alpha_scales_spectrum(self):
        """A uniform alpha scales lambda_max linearly."""
        jac, _ = _random_instance(SeededRng(5), 12, 3)
        base = lambda_max_k(jac, SeededRng(0))
        four = lambda_max_ksg(jac, AlphaBlocks.uniform(4.0, jac.slices), SeededRng(0))
        assert four == pytest.approx(4.0 * base, rel=1e-6)


class TestTheoremMargin:
    """Tests for the stability factor and margin."""

    def test_positive_margin(self):
        """A large quotient gain gives a positive margin."""
        tm = theorem_margin(rho=0.51, rho_sg=3.40, lambda_max_ksg=0.134, eta=1.0)
        assert tm.s_sg == pytest.approx(0.134)
        assert tm.margin == pytest.approx(2.66, abs=0.01)

    def test_negative_margin(self):
        """A small quotient gain gives a negative margin."""
        tm = theorem_margin(rho=15.82, rho_sg=14.99, lambda_max_ksg=0.044, eta=1.0)
        assert tm.margin < -1.0

    def test_equal_quotients_no_step(self):
        """Equal quotients and zero step give zero margin."""
        assert theorem_margin(2.0, 2.0, 5.0, 0.0).margin == 0.0


class TestLocalDecrease:
    """Exact quadratic decrease of the linearized loss."""

    def test_identity_preconditioner(self):
        """Unit multipliers decrease exactly like plain descent."""
        jac, _ = _random_instance(SeededRng(6), 10, 3)
        check = local_decrease_check(jac.matrix, np.ones(jac.matrix.shape[1]), jac.residual, 1e-3)
        assert check.delta_sg == check.delta_std

    def test_zero_step(self):
        """A zero step changes nothing."""
        jac, alphas = _random_instance(SeededRng(7), 10, 3)
        check = local_decrease_check(jac.matrix, alphas, jac.residual, 0.0)
        assert check.delta_std == 0.0
        assert check.delta_sg == 0.0

    def test_sufficient_condition_implies_larger_decrease(self):
        """Whenever s_SG < 2 and the margin is positive, the StableGrad step decreases more."""
        rng = SeededRng(8)
        checked = 0
        for _ in range(500):
            rows = int(rng.generator.integers(2, 31))
            jac, alphas = _random_instance(rng, rows, int(rng.generator.integers(1, 5)))
            lam = np.linalg.eigvalsh(jac.kernel(alphas))[-1]
            eta = float(rng.uniform(0.0, 2.0, 1)[0]) / lam
            check = local_decrease_check(jac.matrix, alphas, jac.residual, eta)
            assert check.s_sg == pytest.approx(eta * check.lambda_max_ksg)
            # ignore margins lost in round-off
            if check.theorem_holds and check.margin > 1e-9 * check.rho_sg:
                checked += 1
                assert check.decrease_holds, check
        assert checked > 50


class TestStdRatio:
    """Tests for r_std_ratio."""

    def test_known_ratio(self):
        """Ratio of largest to smallest block std."""
        assert r_std_ratio([0.1, 4.27]).value == pytest.approx(42.7)
        assert r_std_ratio([2.0, 0.5]).value == 4.0

    def test_equal_blocks(self):
        """Equal blocks give ratio one."""
        assert r_std_ratio([3.0, 3.0, 3.0]).value == 1.0

    def test_zero_block_flagged(self):
        """A zero-std block makes the ratio infinite."""
        ratio = r_std_ratio([0.0, 1.0])
        assert ratio.infinite
        assert ratio.value == float("inf")

    def test_needs_two_blocks(self):
        """One block has no ratio."""
        with pytest.raises(ContractError):
            r_std_ratio([1.0])

    def test_rescaled_gradient_is_balanced(self, poisson_setup):
        """Rescaling equalizes block stds."""
        net, batch = poisson_setup
        grads = assemble_residual(POISSON, net, batch).gradient(net)
        assert r_std_ratio(grads).value > 1.0
        scaled = stablegrad_rescale(grads, 1.0)
        assert r_std_ratio(scaled).value == pytest.approx(1.0, abs=1e-6)


class TestUpdateGeometry:
    """Tests for update_geometry."""

    SLICES = [slice(0, 2), slice(2, 4), slice(4, 6), slice(6, 8)]

    def test_uniform_update(self):
        """Uniform updates spread energy evenly."""
        geo = update_geometry(np.ones(8), np.full(8, 0.1), self.SLICES)
        assert geo.max_energy_concentration == pytest.approx(0.25)
        assert geo.valid_relative_update_ratio == pytest.approx(1.0)
        assert geo.valid_blocks == 4

    def test_concentrated_update(self):
        """A single-block update has concentration one."""
        delta = np.zeros(8)
        delta[2] = 1.0
        assert update_geometry(np.ones(8), delta, self.SLICES).max_energy_concentration == 1.0

    def test_matches_direct_formula(self):
        """Geometry matches the per-block formulas."""
        rng = SeededRng(9)
        theta = rng.normal(8)
        delta = rng.normal(8) * 1e-3
        rel = [np.linalg.norm(delta[s]) / np.linalg.norm(theta[s]) for s in self.SLICES]
        energy = [float(delta[s] @ delta[s]) for s in self.SLICES]
        geo = update_geometry(theta, delta, self.SLICES)
        assert geo.valid_relative_update_ratio == pytest.approx(max(rel) / min(rel), rel=1e-12)
        assert geo.max_energy_concentration == pytest.approx(max(energy) / sum(energy), rel=1e-12)

    def test_small_blocks_excluded(self):
        """Near-zero parameter blocks are skipped."""
        theta = np.ones(8)
        theta[0:2] = 0.0
        delta = np.arange(1.0, 9.0)
        assert update_geometry(theta, delta, self.SLICES).valid_blocks == 3

    def test_all_blocks_invalid(self):
        """No valid block is a domain error."""
        with pytest.raises(DomainError):
            update_geometry(np.zeros(8), np.ones(8), self.SLICES)


class TestLinearization:
    """Tests for linearization_error."""

    def test_error_shrinks_with_step(self, poisson_setup):
        """Linearization error is small and shrinks with the step."""
        net, batch = poisson_setup
        direction = SeededRng(11).normal(net.parameter_count)
        big = linearization_error(net, POISSON, batch, 1e-4 * direction)
        small = linearization_error(net, POISSON, batch, 5e-5 * direction)
        assert big < 1e-2
        assert small < 0.6 * big

    def test_shape_checked(self, poisson_setup):
        """The update must match the parameter count."""
        net, batch = poisson_setup
        with pytest.raises(ContractError):
            linearization_error(net, POISSON, batch, np.zeros(3))


class TestKernelDiagnostics:
    """Tests for a full diagnostic checkpoint."""

    def test_checkpoint_fields(self, poisson_setup):
        """A checkpoint carries consistent fields."""
        net, batch = poisson_setup
        delta = 1e-4 * SeededRng(12).normal(net.parameter_count)
        diag = kernel_diagnostics(net, POISSON, batch, StableGradConfig(), 1e-3, SeededRng(13), epoch=5,
                                  delta_theta=delta, val_loss=0.5)
        jac = assemble_jacobian(net, POISSON, batch)
        assert diag.epoch == 5
        assert diag.rho == pytest.approx(rayleigh_k(jac), rel=1e-12)
        assert diag.rho >= 0.0 and diag.rho_sg >= 0.0
        assert diag.s_sg == 1e-3 * diag.lambda_max_ksg
        assert diag.lambda_max_k == pytest.approx(np.linalg.eigvalsh(jac.kernel())[-1], rel=1e-6)
        assert 1.0 <= diag.r_std_scaled < 1.0 + 1e-6
        assert diag.r_std_raw > 1.0
        assert diag.e_lin is not None and diag.e_lin < 1e-2
        assert diag.converged
        row = diag.to_dict()
        assert list(row)[:3] == ["epoch", "val_loss", "rho"]

    def test_without_update(self, poisson_setup):
        """Update fields stay empty without a step."""
        net, batch = poisson_setup
        diag = kernel_diagnostics(net, POISSON, batch, StableGradConfig(), 1e-3, SeededRng(0))
        assert diag.e_lin is None
        assert diag.spectral_ratio == pytest.approx(diag.lambda_max_ksg / diag.lambda_max_k)


def test_block_gradients_match_jacobian(poisson_setup):
    """GradientBlocks built from J^T r carries the network's block layout."""
    net, batch = poisson_setup
    jac = assemble_jacobian(net, POISSON, batch)
    grads = GradientBlocks(jac.gradient(), net.layout)
    assert [b.size for b in grads.blocks()] == [b.shape[1] for b in jac.blocks()]
