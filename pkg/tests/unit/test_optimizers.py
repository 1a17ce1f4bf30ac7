"""Unit tests for stablegrad.core.optimizers module."""

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablegrad.core.linalg import SeededRng, empirical_std
from stablegrad.core.network import GradientBlocks, LayerSpec, ParameterLayout
from stablegrad.core.optimizers import (
    AdamWState,
    AlphaBlocks,
    LrSchedule,
    MultiplierInterval,
    StableGradConfig,
    adamw_step,
    default_multiplier_table,
    load_multiplier_table,
    lr_at,
    multiplier_frame,
    multipliers_from_diagnostics,
    reference_scale,
    sgd_step,
    sigma_reference,
    sign_rescale,
    stablegrad_alphas,
    stablegrad_rescale,
)
from stablegrad.utils.exceptions import ConfigError, ContractError, NonFiniteGradientError, ShapeError

LAYOUT = ParameterLayout([LayerSpec(3, 4), LayerSpec(4, 4), LayerSpec(4, 1)])

BUNDLED_MULTIPLIERS = [5.114545, 4.355357, 3.303698, 2.603073, 2.214707, 1.795869, 1.487962, 1.336904, 1.139297, 0.950362]


def _grads(seed: int = 0, scales=(1e-3, 1.0, 50.0)) -> GradientBlocks:
    """Gradient whose blocks have very different magnitudes."""
    rng = SeededRng(seed)
    flat = np.empty(LAYOUT.size)
    for s, scale in zip(LAYOUT.block_slices(), scales):
        flat[s] = rng.normal(s.stop - s.start) * scale
    return GradientBlocks(flat, LAYOUT)


seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)
positive = st.floats(min_value=1e-3, max_value=1e3)


class TestStableGradRescale:
    """Tests for the layer-wise rescaling."""

    def test_every_block_std_equals_reference(self):
        """Every rescaled block has std equal to the reference."""
        out = stablegrad_rescale(_grads(), 0.37)
        for sigma in out.sigmas():
            assert sigma == pytest.approx(0.37, rel=1e-6)

    def test_per_tensor_blocks(self):
        """Per-tensor mode rescales weights and biases separately."""
        cfg = StableGradConfig(block_mode="per_tensor")
        out = stablegrad_rescale(_grads(1), 2.0, cfg)
        assert len(out.sigmas()) == 6
        # a one-element tensor has zero spread
        for block, sigma in zip(out.blocks(), out.sigmas()):
            if block.size > 1:
                assert sigma == pytest.approx(2.0, rel=1e-6)

    def test_per_tensor_scalar_bias_gets_epsilon_limited_alpha(self):
        """The 1-element readout bias is its own block with sigma 0, so alpha = c / eps."""
        cfg = StableGradConfig(block_mode="per_tensor")
        alphas = stablegrad_alphas(_grads(1), 2.0, cfg)
        labels = LAYOUT.block_labels("per_tensor")
        bias = labels.index("layer2.bias")
        assert alphas.slices[bias].stop - alphas.slices[bias].start == 1
        assert alphas.alphas[bias] == pytest.approx(2.0 / cfg.epsilon)
        assert max(alphas.alphas[i] for i in range(len(labels)) if i != bias) < 1e6

    @settings(max_examples=50, deadline=None)
    @given(seeds, positive)
    def test_direction_preserved_per_block(self, seed, sigma_ref):
        """Each block is multiplied by a positive scalar."""
        g = _grads(seed)
        out = stablegrad_rescale(g, sigma_ref)
        for a, b in zip(g.blocks(), out.blocks()):
            ratio = b / a
            assert np.all(ratio > 0)
            np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seeds, positive, positive)
    def test_invariant_to_gradient_scale(self, seed, sigma_ref, factor):
        """Scaling the raw gradient does not change the output (eps << sigma)."""
        g = _grads(seed)
        a = stablegrad_rescale(g, sigma_ref).flat
        b = stablegrad_rescale(g.with_flat(factor * g.flat), sigma_ref).flat
        np.testing.assert_allclose(a, b, rtol=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_norm_preserving_variant(self, seed):
        """The norm-preserving reference keeps the gradient norm."""
        g = _grads(seed)
        out = stablegrad_rescale(g, 0.0, StableGradConfig(reference_scale="norm_preserving"))
        assert np.linalg.norm(out.flat) == pytest.approx(np.linalg.norm(g.flat), rel=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(seeds)
    def test_inner_product_preserving_variant(self, seed):
        """The inner-product reference keeps <g, Pg> = <g, g>."""
        g = _grads(seed)
        out = stablegrad_rescale(g, 0.0, StableGradConfig(reference_scale="inner_product_preserving"))
        assert float(g.flat @ out.flat) == pytest.approx(float(g.flat @ g.flat), rel=1e-10)

    def test_zero_gradient_stays_zero(self):
        """A zero gradient maps to zero."""
        g = GradientBlocks(np.zeros(LAYOUT.size), LAYOUT)
        assert np.all(stablegrad_rescale(g, 1.0).flat == 0.0)
        assert reference_scale("norm_preserving", 1.0, np.zeros(3), np.zeros(3), 1e-12) == 0.0

    def test_non_finite_block_reported(self):
        """A NaN block raises with its index."""
        g = _grads()
        g.flat[LAYOUT.block_slices()[1].start] = np.nan
        with pytest.raises(NonFiniteGradientError) as exc_info:
            stablegrad_rescale(g, 1.0)
        assert exc_info.value.block_index == 1
        assert "layer1" in str(exc_info.value)

    def test_negative_reference(self):
        """A negative reference scale is rejected."""
        with pytest.raises(ContractError):
            stablegrad_alphas(_grads(), -1.0, StableGradConfig())

    def test_alpha_blocks(self):
        """Applying alphas equals multiplying by the diagonal."""
        alphas = stablegrad_alphas(_grads(), 1.0, StableGradConfig())
        diag = alphas.diagonal(LAYOUT.size)
        v = np.ones(LAYOUT.size)
        np.testing.assert_array_equal(alphas.apply(v), diag)
        uniform = AlphaBlocks.uniform(1.0, LAYOUT.block_slices())
        assert np.array_equal(uniform.apply(v), v)

    def test_config_validation(self):
        """Invalid epsilon and reference kinds are rejected."""
        with pytest.raises(ConfigError):
            StableGradConfig(epsilon=0.0)
        with pytest.raises(ConfigError):
            StableGradConfig(reference_scale="median")
        with pytest.raises(ConfigError):
            StableGradConfig(block_mode="per_row")

    def test_sigma_reference(self):
        """Reference std from the output adjoint or the residual."""
        adj = np.array([1.0, 3.0, 1.0, 3.0])
        res = np.array([0.0, 4.0])
        assert sigma_reference("output_adjoint", adj, res) == 1.0
        assert sigma_reference("residual_std", adj, res) == 2.0


class TestSignRescale:
    """Tests for sign_rescale."""

    def test_sign(self):
        """Elementwise sign with sign(0) = 0."""
        g = GradientBlocks(np.array([-2.0, 0.0]), ParameterLayout([LayerSpec(1, 1)]))
        assert np.array_equal(sign_rescale(g).flat, [-1.0, 0.0])

    @given(seed=seeds)
    @settings(max_examples=25, deadline=None)
    def test_idempotent(self, seed):
        """Taking the sign twice changes nothing."""
        g = _grads(seed)
        g.flat[::5] = 0.0
        once = sign_rescale(g)
        assert np.array_equal(sign_rescale(once).flat, once.flat)


class TestOptimizerSteps:
    """Tests for SGD and AdamW."""

    def test_sgd_in_place(self):
        """SGD updates in place and returns the delta."""
        params = np.array([1.0, 2.0])
        delta = sgd_step(params, np.array([0.5, -1.0]), 0.1)
        np.testing.assert_allclose(params, [0.95, 2.1])
        np.testing.assert_allclose(delta, [-0.05, 0.1])

    def test_sgd_on_half_norm(self):
        """One step on 0.5 * |theta|^2 scales theta by (1 - lr)."""
        theta = np.array([3.0, -1.5, 0.25])
        params = theta.copy()
        sgd_step(params, params.copy(), 0.2)
        np.testing.assert_allclose(params, 0.8 * theta, rtol=1e-15)

    def test_sgd_contracts_each_eigenmode(self):
        """On a 2-D quadratic every eigen-direction shrinks by exactly (1 - lr * lambda) per step."""
        angle = 0.6
        q = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        lambdas = np.array([4.0, 0.5])
        hessian = q @ np.diag(lambdas) @ q.T
        lr = 0.2
        params = np.array([1.0, -2.0])
        start = q.T @ params
        for _ in range(25):
            sgd_step(params, hessian @ params, lr)
        np.testing.assert_allclose(q.T @ params, (1.0 - lr * lambdas) ** 25 * start, rtol=1e-10, atol=1e-14)

    def test_shape_mismatch(self):
        """Mismatched shapes are rejected."""
        with pytest.raises(ShapeError):
            sgd_step(np.zeros(2), np.zeros(3), 0.1)
        with pytest.raises(ShapeError):
            adamw_step(np.zeros(2), np.zeros(2), AdamWState.zeros(3), 0.1)

    def test_adamw_first_step_is_lr_times_sign(self):
        """Bias correction makes the first step -lr * g / (|g| + eps)."""
        params = np.zeros(3)
        g = np.array([2.0, -0.5, 1e-3])
        state = AdamWState.zeros(3)
        delta = adamw_step(params, g, state, 0.01)
        np.testing.assert_allclose(delta, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        assert state.step == 1

    def test_adamw_matches_reference_recursion(self):
        """AdamW follows the decoupled moment recursion."""
        rng = SeededRng(0)
        params = rng.normal(5)
        expected = params.copy()
        m = np.zeros(5)
        v = np.zeros(5)
        state = AdamWState.zeros(5, weight_decay=0.01)
        for t in range(1, 6):
            g = rng.normal(5)
            adamw_step(params, g, state, 1e-2)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            step = 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            expected = expected - step - 1e-2 * 0.01 * expected
        np.testing.assert_allclose(params, expected, rtol=1e-12, atol=1e-14)

    def test_state_copy_is_independent(self):
        """Copied state does not follow later steps."""
        state = AdamWState.zeros(2)
        clone = state.copy()
        adamw_step(np.zeros(2), np.ones(2), state, 0.1)
        assert clone.step == 0
        assert np.all(clone.m == 0.0)


class TestSchedules:
    """Tests for LrSchedule and lr_at."""

    def test_constant(self):
        """Constant schedule."""
        assert lr_at(LrSchedule("constant", 0.1, 10), 7) == 0.1

    def test_cosine(self):
        """Cosine annealing from base to zero."""
        s = LrSchedule("cosine_annealing", 1.0, 100)
        assert lr_at(s, 0) == 1.0
        assert lr_at(s, 50) == pytest.approx(0.5)
        assert lr_at(s, 100) == pytest.approx(0.0, abs=1e-15)

    def test_warmup(self):
        """Linear warmup then constant."""
        s = LrSchedule("warmup_then_constant", 1.0, 100, warmup_steps=4)
        assert [lr_at(s, i) for i in range(5)] == [0.25, 0.5, 0.75, 1.0, 1.0]

    def test_warmup_needs_steps(self):
        """Warmup needs at least one step."""
        with pytest.raises(ConfigError):
            LrSchedule("warmup_then_constant", 1.0, 100, warmup_steps=0)

    def test_step_out_of_range(self):
        """Steps outside [0, total] are rejected."""
        with pytest.raises(ConfigError):
            lr_at(LrSchedule("constant", 1.0, 10), 11)
        with pytest.raises(ConfigError):
            lr_at(LrSchedule("constant", 1.0, 10), -1)

    def test_unknown_kind(self):
        """Unknown schedule kinds are rejected."""
        with pytest.raises(ConfigError):
            LrSchedule("step_decay")

    def test_piecewise_maps_epochs_to_steps(self):
        """Ten 500-epoch intervals spread evenly over the configured steps."""
        s = LrSchedule("piecewise_multiplier", 1e-3, 1000, intervals=load_multiplier_table())
        assert s.total_epochs == 5000
        assert lr_at(s, 0) == pytest.approx(1e-3 * 5.114545)
        assert lr_at(s, 99) == pytest.approx(1e-3 * 5.114545)
        assert lr_at(s, 100) == pytest.approx(1e-3 * 4.355357)
        assert lr_at(s, 999) == pytest.approx(1e-3 * 0.950362)

    def test_piecewise_needs_table(self):
        """Piecewise schedules need intervals."""
        with pytest.raises(ConfigError):
            LrSchedule("piecewise_multiplier", 1.0, 10)

    def test_unit_multipliers_equal_constant(self):
        """All-one multipliers reproduce the constant schedule."""
        ones = [MultiplierInterval(1, 10, 1.0)]
        piecewise = LrSchedule("piecewise_multiplier", 0.3, 50, intervals=ones)
        constant = LrSchedule("constant", 0.3, 50)
        assert [lr_at(piecewise, i) for i in range(50)] == [lr_at(constant, i) for i in range(50)]


class TestMultiplierTables:
    """Tests for loading and deriving multiplier tables."""

    def test_bundled_table(self):
        """The bundled table loads with the expected multipliers."""
        assert default_multiplier_table().exists()
        intervals = load_multiplier_table()
        assert [iv.multiplier for iv in intervals] == BUNDLED_MULTIPLIERS
        assert intervals[0].start_epoch == 1
        assert intervals[-1].end_epoch == 5000

    def test_gap_rejected(self, tmp_path):
        """Intervals must be contiguous."""
        path = tmp_path / "t.csv"
        pd.DataFrame({"start_epoch": [1, 12], "end_epoch": [10, 20], "multiplier": [1.0, 2.0]}).to_csv(path, index=False)
        with pytest.raises(ConfigError, match="gap"):
            load_multiplier_table(path)

    def test_missing_column(self, tmp_path):
        """Tables need all three columns."""
        path = tmp_path / "t.csv"
        pd.DataFrame({"start_epoch": [1], "multiplier": [1.0]}).to_csv(path, index=False)
        with pytest.raises(ConfigError):
            load_multiplier_table(path)

    def test_uncovered_epoch(self):
        """Epochs outside the table are rejected."""
        s = LrSchedule("piecewise_multiplier", 1.0, 0, intervals=[MultiplierInterval(2, 3, 1.0)])
        with pytest.raises(ConfigError):
            s.multiplier_at_epoch(1)

    def test_from_diagnostics(self):
        """Multipliers follow the lambda_max ratio."""
        rows = [
            {"epoch": 0, "lambda_max_k": 1.0, "lambda_max_ksg": 9.0},
            {"epoch": 100, "lambda_max_k": 2.0, "lambda_max_ksg": 8.0},
            {"epoch": 200, "lambda_max_k": 4.0, "lambda_max_ksg": 6.0},
        ]
        intervals = multipliers_from_diagnostics(rows)
        assert [(iv.start_epoch, iv.end_epoch) for iv in intervals] == [(1, 100), (101, 200)]
        assert [iv.multiplier for iv in intervals] == [4.0, 1.5]
        frame = multiplier_frame(intervals)
        assert list(frame.columns) == ["start_epoch", "end_epoch", "multiplier"]

    def test_from_diagnostics_needs_two_rows(self):
        """One diagnostic row is not enough."""
        with pytest.raises(ConfigError):
            multipliers_from_diagnostics([{"epoch": 0, "lambda_max_k": 1.0, "lambda_max_ksg": 1.0}])


def test_block_sigmas_are_population_std():
    """GradientBlocks.sigmas is the population std of each block."""
    g = _grads(3)
    assert g.sigmas() == [empirical_std(b) for b in g.blocks()]
