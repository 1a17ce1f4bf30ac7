"""Benchmark PDE problems as weighted residual vectors.

Every problem assembles ``r(theta)`` with the square roots of the loss weights
folded in, so that ``L = 0.5 * |r|^2 = sum_X lambda_X * L_X`` with
``L_X = 0.5 * mean(res_X^2)``.

Each residual block also keeps per-entry channel seeds ``dr_i/d(u, u_x, u_xx)``
at its own point. Seeds times entries are the loss adjoints handed to
``backward_params``; seeds alone give Jacobian rows.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from stablegrad.core.linalg import DTYPE, SeededRng
from stablegrad.core.network import ChannelAdjoints, GradientBlocks, MlpNetwork, backward_params
from stablegrad.core.reference import (
    GriddedField,
    burgers_reference,
    cole_hopf_burgers,
    exact_reference,
    helmholtz_exact,
    poisson_exact,
)
from stablegrad.utils.exceptions import ConfigError, ContractError, DomainError

PROBLEM_KINDS = ("burgers1d", "poisson2d", "helmholtz")
BLOCK_LABELS = ("PDE", "BC", "IC")

DOMAINS: Dict[str, Tuple[Tuple[float, float], ...]] = {
    "burgers1d": ((-1.0, 1.0), (0.0, 1.0)),
    "poisson2d": ((0.0, 1.0), (0.0, 1.0)),
    "helmholtz": ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
}

DEFAULT_WEIGHTS: Dict[str, Dict[str, float]] = {
    "burgers1d": {"PDE": 1.0, "BC": 10.0, "IC": 10.0},
    "poisson2d": {"PDE": 1.0, "BC": 100.0},
    "helmholtz": {"PDE": 1.0, "BC": 100.0},
}


@dataclass
class ProblemSpec:
    """Which benchmark to solve and with which coefficients and loss weights."""

    kind: str = "burgers1d"
    nu: float = 0.05
    k: float = 10.0 * np.pi
    m: int = 10
    weights: Dict[str, float] = field(default_factory=dict)
    normalize_pde: bool = True

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"unknown problem '{self.kind}', expected one of {PROBLEM_KINDS}")
        if self.kind == "burgers1d" and not self.nu > 0:
            raise ConfigError(f"problem.nu must be positive, got {self.nu}")
        if self.kind == "helmholtz":
            if not self.k > 0:
                raise ConfigError(f"problem.k must be positive, got {self.k}")
            if int(self.m) < 1:
                raise ConfigError(f"problem.m must be >= 1, got {self.m}")
        merged = dict(DEFAULT_WEIGHTS[self.kind])
        for label, value in (self.weights or {}).items():
            if label not in merged:
                raise ConfigError(f"problem '{self.kind}' has no '{label}' loss term")
            merged[label] = float(value)
        for label, value in merged.items():
            if not value > 0:
                raise ConfigError(f"loss weight for {label} must be positive, got {value}")
        self.weights = merged

    @property
    def bounds(self) -> Tuple[Tuple[float, float], ...]:
        return DOMAINS[self.kind]

    @property
    def input_dim(self) -> int:
        return len(self.bounds)

    @property
    def block_names(self) -> Tuple[str, ...]:
        return tuple(label for label in BLOCK_LABELS if label in self.weights)

    @property
    def has_initial_condition(self) -> bool:
        return "IC" in self.weights

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class BatchSizes:
    pde: int = 2000
    bc: int = 200
    ic: int = 200

    def __post_init__(self):
        for name in ("pde", "bc", "ic"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"batch size '{name}' must be >= 1, got {getattr(self, name)}")


@dataclass
class CollocationBatch:
    pde_points: np.ndarray
    bc_points: np.ndarray
    bc_values: np.ndarray
    ic_points: Optional[np.ndarray] = None
    ic_values: Optional[np.ndarray] = None

    @property
    def sizes(self) -> Dict[str, int]:
        out = {"PDE": len(self.pde_points), "BC": len(self.bc_points)}
        if self.ic_points is not None:
            out["IC"] = len(self.ic_points)
        return out


def sample_batch(spec: ProblemSpec, sizes: BatchSizes, rng: SeededRng) -> CollocationBatch:
    """Uniform interior points, boundary points on the faces, IC points at t = 0."""
    bounds = np.asarray(spec.bounds, dtype=DTYPE)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = spec.input_dim

    def interior(n: int) -> np.ndarray:
        return lo + (hi - lo) * rng.uniform(0.0, 1.0, (n, d))

    pde = interior(sizes.pde)
    if spec.kind == "burgers1d":
        bc = interior(sizes.bc)
        side = rng.generator.integers(0, 2, sizes.bc)
        bc[:, 0] = np.where(side == 0, lo[0], hi[0])
        ic = interior(sizes.ic)
        ic[:, 1] = 0.0
        return CollocationBatch(pde, bc, np.zeros(sizes.bc, dtype=DTYPE), ic, -np.sin(np.pi * ic[:, 0]))

    bc = interior(sizes.bc)
    axis = rng.generator.integers(0, d, sizes.bc)
    side = rng.generator.integers(0, 2, sizes.bc)
    rows = np.arange(sizes.bc)
    bc[rows, axis] = np.where(side == 0, lo[axis], hi[axis])
    return CollocationBatch(pde, bc, _exact_values(spec, bc))


def _exact_values(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    if spec.kind == "poisson2d":
        return poisson_exact(points)
    return helmholtz_exact(points, spec.m)


# ---------------------------------------------------------------------------
# Field models
# ---------------------------------------------------------------------------

class FieldModel(Protocol):
    """Anything that yields value and input-derivative channels at points."""

    input_dim: int
    output_dim: int

    def evaluate(self, points: np.ndarray, order: int = 0) -> Any:
        ...


@dataclass
class FieldChannels:
    """Output channels of a field: ``u`` ``(B, 1)``, ``du`` / ``d2u`` ``(d, B, 1)``."""

    points: np.ndarray
    order: int
    u: np.ndarray
    du: Optional[np.ndarray] = None
    d2u: Optional[np.ndarray] = None


ScalarFn = Callable[[np.ndarray], np.ndarray]


class AnalyticField:
    """Closed-form scalar field; derivatives analytic or by central differences."""

    output_dim = 1

    def __init__(
        self,
        input_dim: int,
        value: ScalarFn,
        first: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        second: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        fd_step: float = 1e-3,
    ):
        self.input_dim = input_dim
        self.value = value
        self.first = first
        self.second = second
        self.fd_step = fd_step

    def _shifted(self, x: np.ndarray, i: int, h: float) -> Tuple[np.ndarray, np.ndarray]:
        plus = x.copy()
        minus = x.copy()
        plus[:, i] += h
        minus[:, i] -= h
        return self.value(plus), self.value(minus)

    def evaluate(self, points: np.ndarray, order: int = 0) -> FieldChannels:
        x = np.asarray(points, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ContractError(f"field expects points of shape (B, {self.input_dim}), got {x.shape}")
        u = self.value(x)
        out = FieldChannels(x, order, u[:, None])
        h = self.fd_step
        if order >= 1:
            if self.first is not None:
                du = self.first(x)
            else:
                du = np.stack([(p - m) / (2.0 * h) for p, m in (self._shifted(x, i, h) for i in range(self.input_dim))])
            out.du = du[..., None]
        if order >= 2:
            if self.second is not None:
                d2u = self.second(x)
            else:
                d2u = np.stack([
                    (p - 2.0 * u + m) / (h * h) for p, m in (self._shifted(x, i, h) for i in range(self.input_dim))
                ])
            out.d2u = d2u[..., None]
        return out

    def scaled(self, factor: float) -> 'AnalyticField':
        def scale(fn):
            return None if fn is None else (lambda x: factor * fn(x))
        return AnalyticField(self.input_dim, scale(self.value), scale(self.first), scale(self.second), self.fd_step)


def exact_field(spec: ProblemSpec) -> AnalyticField:
    """The benchmark's exact solution as a field model."""
    if spec.kind == "burgers1d":
        return AnalyticField(2, lambda x: cole_hopf_burgers(spec.nu, x[:, 0], x[:, 1]))
    if spec.kind == "poisson2d":
        def first(x):
            sx, sy = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
            cx, cy = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
            return np.pi * np.stack([cx * sy, sx * cy])
        return AnalyticField(
            2, poisson_exact, first,
            lambda x: -(np.pi ** 2) * np.stack([poisson_exact(x)] * 2),
        )
    w = spec.m * np.pi

    def first(x):
        s = np.sin(w * x)
        c = np.cos(w * x)
        return w * np.stack([c[:, 0] * s[:, 1] * s[:, 2], s[:, 0] * c[:, 1] * s[:, 2], s[:, 0] * s[:, 1] * c[:, 2]])
    return AnalyticField(
        3, lambda x: helmholtz_exact(x, spec.m), first,
        lambda x: -(w ** 2) * np.stack([helmholtz_exact(x, spec.m)] * 3),
    )


# ---------------------------------------------------------------------------
# Residual vectors
# ---------------------------------------------------------------------------

@dataclass
class ResidualBlock:
    """One loss term: raw residuals ``res_X`` at its points and their seeds."""

    label: str
    weight: float
    raw: np.ndarray
    seeds: ChannelAdjoints
    trace: Any

    @property
    def size(self) -> int:
        return len(self.raw)

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.weight / self.size))

    @property
    def entries(self) -> np.ndarray:
        return self.scale * self.raw

    @property
    def loss(self) -> float:
        return 0.5 * float(np.mean(self.raw * self.raw))

    def adjoints(self) -> ChannelAdjoints:
        """dL/d(channels) for ``L = 0.5 * |entries|^2``."""
        r = self.entries
        return ChannelAdjoints(
            value=r[:, None] * self.seeds.value if self.seeds.value is not None else None,
            first=r[None, :, None] * self.seeds.first if self.seeds.first is not None else None,
            second=r[None, :, None] * self.seeds.second if self.seeds.second is not None else None,
        )


@dataclass
class ResidualVector:
    kind: str
    blocks: List[ResidualBlock]

    @property
    def entries(self) -> np.ndarray:
        return np.concatenate([b.entries for b in self.blocks])

    @property
    def block_labels(self) -> np.ndarray:
        return np.concatenate([np.full(b.size, b.label) for b in self.blocks])

    @property
    def weights(self) -> Dict[str, float]:
        return {b.label: b.weight for b in self.blocks}

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def block(self, label: str) -> ResidualBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def row_slices(self) -> Dict[str, slice]:
        out = {}
        start = 0
        for b in self.blocks:
            out[b.label] = slice(start, start + b.size)
            start += b.size
        return out

    def component_losses(self) -> Dict[str, float]:
        """Unweighted ``L_X = 0.5 * mean(res_X^2)`` per term."""
        return {b.label: b.loss for b in self.blocks}

    def weighted_loss(self) -> float:
        return sum(b.weight * b.loss for b in self.blocks)

    def loss(self) -> float:
        r = self.entries
        return 0.5 * float(r @ r)

    def output_adjoint(self) -> np.ndarray:
        """Value-channel adjoints of every block, concatenated at the network output."""
        parts = [
            b.adjoints().value.ravel() if b.seeds.value is not None else np.zeros(b.size, dtype=DTYPE)
            for b in self.blocks
        ]
        return np.concatenate(parts)

    def gradient(self, net: MlpNetwork, block_mode: str = "per_layer_joint") -> GradientBlocks:
        """Exact ``grad_theta 0.5 * |r|^2`` for a network field."""
        flat = np.zeros(net.parameter_count, dtype=DTYPE)
        for b in self.blocks:
            flat += backward_params(net, b.trace, b.adjoints()).flat
        return GradientBlocks(flat, net.layout, block_mode)

    def jacobian(self, net: MlpNetwork) -> np.ndarray:
        """Dense ``dr/dtheta``, one row per residual entry."""
        rows = []
        for b in self.blocks:
            rows.append(backward_params(net, b.trace, b.seeds, per_sample=True))
        return np.vstack(rows)


def _check_arity(model: FieldModel, input_dim: int, problem: str) -> None:
    if model.input_dim != input_dim or model.output_dim != 1:
        raise ContractError(
            f"{problem} needs a field with {input_dim} inputs and 1 output, "
            f"got {model.input_dim} -> {model.output_dim}"
        )


def _seeds(n: int, d: int, value=None, first: Optional[Dict[int, Any]] = None,
           second: Optional[Dict[int, Any]] = None) -> ChannelAdjoints:
    """Per-point partials of the raw residual; scalars broadcast over points."""
    def channel(parts):
        arr = np.zeros((d, n, 1), dtype=DTYPE)
        for i, v in parts.items():
            arr[i, :, 0] = v
        return arr

    val = None
    if value is not None:
        val = np.zeros((n, 1), dtype=DTYPE)
        val[:, 0] = value
    return ChannelAdjoints(
        value=val,
        first=channel(first) if first else None,
        second=channel(second) if second else None,
    )


def _value_block(label: str, model: FieldModel, points: np.ndarray, target: np.ndarray, weight: float) -> ResidualBlock:
    trace = model.evaluate(points, 0)
    raw = trace.u[:, 0] - target
    return ResidualBlock(label, weight, raw, _seeds(len(raw), points.shape[1], value=1.0), trace)


def _scale_seeds(seeds: ChannelAdjoints, factor: float) -> ChannelAdjoints:
    return ChannelAdjoints(
        *(None if arr is None else factor * arr for arr in (seeds.value, seeds.first, seeds.second))
    )


def _finish(kind: str, blocks: List[ResidualBlock]) -> ResidualVector:
    # seeds are stored per entry: d entry / d channel = scale * d raw / d channel
    for b in blocks:
        b.seeds = _scale_seeds(b.seeds, b.scale)
    return ResidualVector(kind, blocks)


def burgers_residual(
    model: FieldModel,
    batch: CollocationBatch,
    nu: float,
    weights: Optional[Dict[str, float]] = None,
) -> ResidualVector:
    """``u_t + u u_x - nu u_xx`` inside, ``u(x, 0) + sin(pi x)`` at t = 0, ``u(+-1, t)`` on the walls."""
    _check_arity(model, 2, "burgers1d")
    if batch.ic_points is None:
        raise ContractError("burgers1d needs initial-condition points")
    w = ProblemSpec("burgers1d", nu=nu, weights=weights or {}).weights
    trace = model.evaluate(batch.pde_points, 2)
    u = trace.u[:, 0]
    ux, ut = trace.du[0, :, 0], trace.du[1, :, 0]
    uxx = trace.d2u[0, :, 0]
    raw = ut + u * ux - nu * uxx
    n = len(raw)
    pde = ResidualBlock("PDE", w["PDE"], raw, _seeds(n, 2, value=ux, first={0: u, 1: 1.0}, second={0: -nu}), trace)
    bc = _value_block("BC", model, batch.bc_points, batch.bc_values, w["BC"])
    ic = _value_block("IC", model, batch.ic_points, batch.ic_values, w["IC"])
    return _finish("burgers1d", [pde, bc, ic])


def poisson_residual(
    model: FieldModel,
    batch: CollocationBatch,
    weights: Optional[Dict[str, float]] = None,
) -> ResidualVector:
    """``Laplace(u) - f`` with ``f = -2 pi^2 u*``; Dirichlet ``u - u*`` on the boundary."""
    _check_arity(model, 2, "poisson2d")
    w = ProblemSpec("poisson2d", weights=weights or {}).weights
    trace = model.evaluate(batch.pde_points, 2)
    forcing = -2.0 * np.pi ** 2 * poisson_exact(batch.pde_points)
    raw = trace.d2u[:, :, 0].sum(axis=0) - forcing
    pde = ResidualBlock("PDE", w["PDE"], raw, _seeds(len(raw), 2, second={0: 1.0, 1: 1.0}), trace)
    bc = _value_block("BC", model, batch.bc_points, batch.bc_values, w["BC"])
    return _finish("poisson2d", [pde, bc])


def helmholtz_residual(
    model: FieldModel,
    batch: CollocationBatch,
    k: float,
    m: int,
    weights: Optional[Dict[str, float]] = None,
    normalize_pde: bool = True,
) -> ResidualVector:
    """``(Laplace(u) + k^2 u - q) / k^2`` with ``q = (k^2 - 3 m^2 pi^2) u*``; BC term is not normalized."""
    _check_arity(model, 3, "helmholtz")
    w = ProblemSpec("helmholtz", k=k, m=m, weights=weights or {}).weights
    trace = model.evaluate(batch.pde_points, 2)
    k2 = k * k
    source = (k2 - 3.0 * m * m * np.pi ** 2) * helmholtz_exact(batch.pde_points, m)
    norm = 1.0 / k2 if normalize_pde else 1.0
    raw = norm * (trace.d2u[:, :, 0].sum(axis=0) + k2 * trace.u[:, 0] - source)
    seeds = _seeds(len(raw), 3, value=norm * k2, second={0: norm, 1: norm, 2: norm})
    pde = ResidualBlock("PDE", w["PDE"], raw, seeds, trace)
    bc = _value_block("BC", model, batch.bc_points, batch.bc_values, w["BC"])
    return _finish("helmholtz", [pde, bc])


def assemble_residual(spec: ProblemSpec, model: FieldModel, batch: CollocationBatch) -> ResidualVector:
    if spec.kind == "burgers1d":
        return burgers_residual(model, batch, spec.nu, spec.weights)
    if spec.kind == "poisson2d":
        return poisson_residual(model, batch, spec.weights)
    return helmholtz_residual(model, batch, spec.k, spec.m, spec.weights, spec.normalize_pde)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def reference_field(spec: ProblemSpec, resolution: Sequence[int], method: str = "auto") -> GriddedField:
    """Gridded reference: ``(nx, nt)`` for Burgers, ``(n,)`` per axis otherwise."""
    if spec.kind == "burgers1d":
        nx, nt = resolution
        return burgers_reference(spec.nu, np.linspace(-1.0, 1.0, nx), np.linspace(0.0, 1.0, nt), method)
    return exact_reference(spec.kind, int(resolution[0]), spec.m)


def relative_l2(model: FieldModel, reference: GriddedField, chunk_size: int = 16384) -> float:
    """``|u - u_ref| / |u_ref|`` over the reference grid."""
    points = reference.points()
    if model.input_dim != points.shape[1]:
        raise ContractError(f"reference grid is {points.shape[1]}-D, field takes {model.input_dim} inputs")
    ref = reference.values.ravel()
    ref_norm = float(np.linalg.norm(ref))
    if ref_norm == 0.0:
        raise DomainError("reference field has zero norm")
    pred = np.concatenate([
        model.evaluate(points[i:i + chunk_size], 0).u[:, 0] for i in range(0, len(points), chunk_size)
    ])
    return float(np.linalg.norm(pred - ref)) / ref_norm


def validation_summary(
    spec: ProblemSpec,
    model: FieldModel,
    batch: CollocationBatch,
    reference: Optional[GriddedField] = None,
) -> Dict[str, float]:
    """Relative L2 and per-term validation losses on an independent batch."""
    residuals = assemble_residual(spec, model, batch)
    summary = {f"val_loss_{label.lower()}": loss for label, loss in residuals.component_losses().items()}
    summary["val_loss"] = residuals.loss()
    if reference is not None:
        summary["relative_l2"] = relative_l2(model, reference)
    return summary
