"""Fully connected networks with exact input-derivative channels.

The forward pass carries, next to each layer's activations ``h``, the first
input-derivative channels ``p = dh/dx_i`` and the diagonal second-derivative
channels ``q = d2h/dx_i2`` for every raw input coordinate ``i``:

    p_{l+1} = phi'(z_l) * (W_l p_l)
    q_{l+1} = phi''(z_l) * (W_l p_l)**2 + phi'(z_l) * (W_l q_l)

``backward_params`` runs reverse mode through all three channels, so losses
built from ``u``, ``u_x`` and ``u_xx`` get exact parameter gradients.

Array conventions: points are ``(B, d)``, layer activations ``(B, n)``,
derivative channels ``(d, B, n)``, weights ``(n_out, n_in)``.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from stablegrad.core.linalg import DTYPE, SeededRng, empirical_std
from stablegrad.utils.exceptions import ContractError, DomainError, NumericalOverflowError

ACTIVATION_KINDS = ("tanh", "silu", "identity")
NORM_KINDS = ("batch_norm", "layer_norm")
BLOCK_MODES = ("per_layer_joint", "per_tensor")

# Activation-aware fan gains; silu uses 1.0 (near-linear at the origin).
DEFAULT_GAINS = {"tanh": 5.0 / 3.0, "silu": 1.0, "identity": 1.0}

NORM_EPS = 1e-5


@dataclass(frozen=True)
class Activation:
    """Scalar nonlinearity with analytic derivatives up to third order."""

    kind: str = "tanh"

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ContractError(f"unknown activation '{self.kind}', expected one of {ACTIVATION_KINDS}")

    @property
    def default_gain(self) -> float:
        return DEFAULT_GAINS[self.kind]

    def derivatives(self, z: np.ndarray, order: int) -> List[np.ndarray]:
        """Return ``[phi, phi', ..., phi^(order)]`` evaluated at ``z`` (order <= 3)."""
        if self.kind == "identity":
            out = [z, np.ones_like(z), np.zeros_like(z), np.zeros_like(z)]
        elif self.kind == "tanh":
            t = np.tanh(z)
            d1 = 1.0 - t * t
            out = [t, d1, -2.0 * t * d1, d1 * (6.0 * t * t - 2.0)]
        else:
            s = 1.0 / (1.0 + np.exp(-z))
            s1 = s * (1.0 - s)
            s2 = s1 * (1.0 - 2.0 * s)
            s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1
            out = [z * s, s + z * s1, 2.0 * s1 + z * s2, 3.0 * s2 + z * s3]
        return out[: order + 1]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.derivatives(z, 0)[0]


@dataclass(frozen=True)
class FourierFeatures:
    """Per-coordinate sinusoidal input features ``sin(pi f x_i)``, ``cos(pi f x_i)``.

    For each coordinate the layout is ``[x_i?, sin(pi f_1 x_i), ..., cos(pi f_1 x_i), ...]``.
    """

    coordinate_count: int
    frequencies: Tuple[float, ...] = tuple(float(f) for f in range(1, 13))
    include_raw: bool = True

    @property
    def per_coordinate(self) -> int:
        return 2 * len(self.frequencies) + int(self.include_raw)

    @property
    def output_dim(self) -> int:
        return self.coordinate_count * self.per_coordinate

    def map(self, x: np.ndarray, order: int) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
        """Features plus their first/second derivatives w.r.t. each raw coordinate."""
        batch, d = x.shape
        width = self.per_coordinate
        omega = np.pi * np.asarray(self.frequencies, dtype=DTYPE)
        feats = np.zeros((batch, self.output_dim), dtype=DTYPE)
        p = np.zeros((d, batch, self.output_dim), dtype=DTYPE) if order >= 1 else None
        q = np.zeros((d, batch, self.output_dim), dtype=DTYPE) if order >= 2 else None
        nf = len(omega)
        for i in range(d):
            base = i * width
            arg = x[:, i:i + 1] * omega
            sin, cos = np.sin(arg), np.cos(arg)
            off = base
            if self.include_raw:
                feats[:, off] = x[:, i]
                if p is not None:
                    p[i, :, off] = 1.0
                off += 1
            feats[:, off:off + nf] = sin
            feats[:, off + nf:off + 2 * nf] = cos
            if p is not None:
                p[i, :, off:off + nf] = omega * cos
                p[i, :, off + nf:off + 2 * nf] = -omega * sin
            if q is not None:
                q[i, :, off:off + nf] = -(omega ** 2) * sin
                q[i, :, off + nf:off + 2 * nf] = -(omega ** 2) * cos
        return feats, p, q


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation = Activation("tanh")
    norm: Optional[str] = None

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ContractError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.norm is not None and self.norm not in NORM_KINDS:
            raise ContractError(f"unknown norm '{self.norm}', expected one of {NORM_KINDS}")

    @property
    def tensor_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        shapes = [("weight", (self.out_dim, self.in_dim)), ("bias", (self.out_dim,))]
        if self.norm is not None:
            shapes += [("gamma", (self.out_dim,)), ("beta", (self.out_dim,))]
        return shapes


@dataclass(frozen=True)
class TensorSlot:
    layer: int
    name: str
    shape: Tuple[int, ...]
    start: int
    stop: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


class ParameterLayout:
    """Fixed ordering theta = (theta^1, ..., theta^L) of all parameter tensors.

    ``per_layer_joint`` gives one block per layer (weight, bias and any norm
    scale/shift together). ``per_tensor`` gives one block per tensor, so a
    one-element tensor such as the scalar readout bias becomes its own block
    with sigma = 0; StableGrad then scales it by ``c / eps`` (about ``1e12 * c``
    at the default eps).
    """

    def __init__(self, layers: Sequence[LayerSpec]):
        slots = []
        offset = 0
        for idx, spec in enumerate(layers):
            for name, shape in spec.tensor_shapes:
                size = int(np.prod(shape))
                slots.append(TensorSlot(idx, name, shape, offset, offset + size))
                offset += size
        self.slots: Tuple[TensorSlot, ...] = tuple(slots)
        self.size = offset
        self.layer_count = len(layers)

    def block_slices(self, mode: str = "per_layer_joint") -> List[slice]:
        if mode == "per_tensor":
            return [s.slice for s in self.slots]
        if mode != "per_layer_joint":
            raise ContractError(f"unknown block mode '{mode}', expected one of {BLOCK_MODES}")
        out = []
        for layer in range(self.layer_count):
            mine = [s for s in self.slots if s.layer == layer]
            out.append(slice(mine[0].start, mine[-1].stop))
        return out

    def block_labels(self, mode: str = "per_layer_joint") -> List[str]:
        if mode == "per_tensor":
            return [f"layer{s.layer}.{s.name}" for s in self.slots]
        return [f"layer{i}" for i in range(self.layer_count)]

    def unflatten(self, flat: np.ndarray) -> List[Dict[str, np.ndarray]]:
        tensors: List[Dict[str, np.ndarray]] = [dict() for _ in range(self.layer_count)]
        for s in self.slots:
            tensors[s.layer][s.name] = flat[s.start:s.stop].reshape(s.shape)
        return tensors


@dataclass
class GradientBlocks:
    """Parameter gradient in layout order with per-block statistics."""

    flat: np.ndarray
    layout: ParameterLayout
    block_mode: str = "per_layer_joint"
    layer_adjoints: Optional[List[np.ndarray]] = None

    def blocks(self) -> List[np.ndarray]:
        return [self.flat[s] for s in self.layout.block_slices(self.block_mode)]

    def sigmas(self) -> List[float]:
        return [empirical_std(b) for b in self.blocks()]

    def tensors(self) -> List[Dict[str, np.ndarray]]:
        return self.layout.unflatten(self.flat)

    def with_flat(self, flat: np.ndarray) -> 'GradientBlocks':
        return GradientBlocks(flat, self.layout, self.block_mode)

    def with_mode(self, block_mode: str) -> 'GradientBlocks':
        return GradientBlocks(self.flat, self.layout, block_mode, self.layer_adjoints)


@dataclass
class ChannelAdjoints:
    """dL/d(channel) at the network output: value ``(B, n_out)``, first/second ``(d, B, n_out)``."""

    value: Optional[np.ndarray] = None
    first: Optional[np.ndarray] = None
    second: Optional[np.ndarray] = None


@dataclass
class _LayerCache:
    h_in: np.ndarray
    p_in: Optional[np.ndarray]
    q_in: Optional[np.ndarray]
    z: np.ndarray
    derivs: List[np.ndarray]
    s: Optional[np.ndarray]
    t: Optional[np.ndarray]
    h_out: np.ndarray
    norm: Optional[Tuple[str, np.ndarray, np.ndarray]] = None


@dataclass
class DerivativeTrace:
    """Cached forward state of every layer plus the output channels."""

    points: np.ndarray
    order: int
    layers: List[_LayerCache]
    u: np.ndarray
    du: Optional[np.ndarray] = None
    d2u: Optional[np.ndarray] = None

    @property
    def batch_size(self) -> int:
        return self.points.shape[0]


@dataclass
class Initializer:
    mode: str = "fan_in"
    gain: Optional[float] = None
    distribution: str = "normal"

    def __post_init__(self):
        if self.mode not in ("fan_in", "fan_out"):
            raise ContractError(f"unknown initializer mode '{self.mode}'")
        if self.distribution not in ("normal", "uniform"):
            raise ContractError(f"unknown initializer distribution '{self.distribution}'")


class MlpNetwork:
    """Layered perceptron u_theta(x) with optional Fourier-feature input map."""

    def __init__(
        self,
        layers: Sequence[LayerSpec],
        feature_map: Optional[FourierFeatures] = None,
        params: Optional[List[Dict[str, np.ndarray]]] = None,
    ):
        if not layers:
            raise ContractError("a network needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ContractError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        if feature_map is not None and feature_map.output_dim != layers[0].in_dim:
            raise ContractError(
                f"feature map emits {feature_map.output_dim} features, first layer expects {layers[0].in_dim}"
            )
        self.layers = list(layers)
        self.feature_map = feature_map
        self.layout = ParameterLayout(self.layers)
        if params is None:
            params = []
            for spec in self.layers:
                layer = {name: np.zeros(shape, dtype=DTYPE) for name, shape in spec.tensor_shapes}
                if spec.norm is not None:
                    layer["gamma"][:] = 1.0
                params.append(layer)
        self.params = params

    @classmethod
    def build(
        cls,
        input_dim: int,
        output_dim: int,
        depth: int,
        width: int,
        activation: str = "tanh",
        output_activation: str = "identity",
        norm: Optional[str] = None,
        fourier: Optional[FourierFeatures] = None,
    ) -> 'MlpNetwork':
        """``depth`` hidden layers of ``width`` units followed by a linear readout."""
        act = Activation(activation)
        first_in = fourier.output_dim if fourier is not None else input_dim
        dims = [first_in] + [width] * depth
        layers = [LayerSpec(a, b, act, norm) for a, b in zip(dims[:-1], dims[1:])]
        layers.append(LayerSpec(dims[-1], output_dim, Activation(output_activation)))
        return cls(layers, fourier)

    @property
    def input_dim(self) -> int:
        if self.feature_map is not None:
            return self.feature_map.coordinate_count
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def parameter_count(self) -> int:
        return self.layout.size

    @property
    def has_norm_layers(self) -> bool:
        return any(spec.norm is not None for spec in self.layers)

    def flat_parameters(self) -> np.ndarray:
        flat = np.empty(self.layout.size, dtype=DTYPE)
        for s in self.layout.slots:
            flat[s.slice] = self.params[s.layer][s.name].ravel()
        return flat

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=DTYPE)
        if flat.shape != (self.layout.size,):
            raise ContractError(f"expected {self.layout.size} parameters, got shape {flat.shape}")
        for s in self.layout.slots:
            self.params[s.layer][s.name] = flat[s.slice].reshape(s.shape).copy()

    def copy(self) -> 'MlpNetwork':
        params = [{k: v.copy() for k, v in layer.items()} for layer in self.params]
        return MlpNetwork(self.layers, self.feature_map, params)

    def evaluate(self, points: np.ndarray, order: int = 0) -> DerivativeTrace:
        return forward(self, points, order)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return forward(self, points, 0).u


def _check_finite(arrays, layer_index: int) -> None:
    for arr in arrays:
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NumericalOverflowError(
                f"numerical overflow: non-finite values in layer {layer_index}", layer_index=layer_index
            )


def _norm_forward(a: np.ndarray, kind: str, gamma: np.ndarray, beta: np.ndarray):
    axis = 0 if kind == "batch_norm" else 1
    mean = a.mean(axis=axis, keepdims=True)
    var = a.var(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = (a - mean) * inv_std
    return xhat * gamma + beta, (kind, xhat, inv_std)


def _norm_backward(dy: np.ndarray, cache, gamma: np.ndarray):
    kind, xhat, inv_std = cache
    axis = 0 if kind == "batch_norm" else 1
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    da = inv_std * (
        dxhat
        - dxhat.mean(axis=axis, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True)
    )
    return da, dgamma, dbeta


def forward(net: MlpNetwork, x: np.ndarray, order: int = 0) -> DerivativeTrace:
    """Evaluate ``u`` and, for ``order`` >= 1/2, ``du/dx_i`` and ``d2u/dx_i2``."""
    if order not in (0, 1, 2):
        raise ContractError(f"derivative order must be 0, 1 or 2, got {order}")
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ContractError(f"network expects points of shape (B, {net.input_dim}), got {x.shape}")
    if order > 0 and net.has_norm_layers:
        raise ContractError("norm layers do not support input-derivative channels")

    batch, d = x.shape
    if net.feature_map is not None:
        h, p, q = net.feature_map.map(x, order)
    else:
        h = x
        p = np.broadcast_to(np.eye(d, dtype=DTYPE)[:, None, :], (d, batch, d)).copy() if order >= 1 else None
        q = np.zeros((d, batch, d), dtype=DTYPE) if order >= 2 else None

    caches = []
    with np.errstate(over="ignore", invalid="ignore"):
        for idx, (spec, prm) in enumerate(zip(net.layers, net.params)):
            W = prm["weight"]
            z = h @ W.T + prm["bias"]
            norm_cache = None
            if spec.norm is not None:
                z, norm_cache = _norm_forward(z, spec.norm, prm["gamma"], prm["beta"])
            derivs = spec.activation.derivatives(z, order + 1)
            s = p @ W.T if p is not None else None
            t = q @ W.T if q is not None else None
            h_out = derivs[0]
            p_out = derivs[1] * s if s is not None else None
            q_out = derivs[2] * s * s + derivs[1] * t if t is not None else None
            _check_finite((z, h_out, p_out, q_out), idx)
            caches.append(_LayerCache(h, p, q, z, derivs, s, t, h_out, norm_cache))
            h, p, q = h_out, p_out, q_out

    return DerivativeTrace(points=x, order=order, layers=caches, u=h, du=p, d2u=q)


def _nonzero(arr: Optional[np.ndarray]) -> bool:
    return arr is not None and bool(np.any(arr != 0.0))


def backward_params(
    net: MlpNetwork,
    trace: DerivativeTrace,
    adjoints: ChannelAdjoints,
    per_sample: bool = False,
    block_mode: str = "per_layer_joint",
    keep_layer_adjoints: bool = False,
):
    """Reverse-mode gradient of a scalar loss built from the output channels.

    Returns GradientBlocks, or with ``per_sample=True`` a ``(B, P)`` array whose
    row ``b`` is the contribution of point ``b`` (rows sum to the full gradient).
    """
    batch = trace.batch_size
    n_out = net.output_dim
    if _nonzero(adjoints.first) and trace.order < 1:
        raise ContractError("first-derivative adjoint given but trace has no first-derivative channel")
    if _nonzero(adjoints.second) and trace.order < 2:
        raise ContractError("second-derivative adjoint given but trace has no second-derivative channel")
    if per_sample and any(spec.norm == "batch_norm" for spec in net.layers):
        raise ContractError("per-sample gradients are undefined with batch normalization")

    a = adjoints.value if adjoints.value is not None else np.zeros((batch, n_out), dtype=DTYPE)
    a = np.asarray(a, dtype=DTYPE).reshape(batch, n_out)
    b = adjoints.first if trace.order >= 1 and adjoints.first is not None else None
    c = adjoints.second if trace.order >= 2 and adjoints.second is not None else None

    layout = net.layout
    grad = np.zeros((batch, layout.size) if per_sample else layout.size, dtype=DTYPE)
    slots = {(s.layer, s.name): s for s in layout.slots}
    layer_adjoints: List[np.ndarray] = []

    for idx in range(len(net.layers) - 1, -1, -1):
        cache = trace.layers[idx]
        prm = net.params[idx]
        W = prm["weight"]
        if keep_layer_adjoints:
            layer_adjoints.append(a)
        d = cache.derivs
        dz = a * d[1]
        ds = None
        dt = None
        if b is not None:
            dz = dz + np.sum(b * d[2] * cache.s, axis=0)
            ds = b * d[1]
        if c is not None:
            dz = dz + np.sum(c * (d[3] * cache.s * cache.s + d[2] * cache.t), axis=0)
            ds_c = 2.0 * c * d[2] * cache.s
            ds = ds_c if ds is None else ds + ds_c
            dt = c * d[1]

        if cache.norm is not None:
            dy = dz
            dz, dgamma, dbeta = _norm_backward(dy, cache.norm, prm["gamma"])
            if per_sample:
                grad[:, slots[(idx, "gamma")].slice] = dy * cache.norm[1]
                grad[:, slots[(idx, "beta")].slice] = dy
            else:
                grad[slots[(idx, "gamma")].slice] = dgamma
                grad[slots[(idx, "beta")].slice] = dbeta

        w_slot = slots[(idx, "weight")].slice
        b_slot = slots[(idx, "bias")].slice
        if per_sample:
            gw = np.einsum("bo,bi->boi", dz, cache.h_in)
            if ds is not None:
                gw += np.einsum("kbo,kbi->boi", ds, cache.p_in)
            if dt is not None:
                gw += np.einsum("kbo,kbi->boi", dt, cache.q_in)
            grad[:, w_slot] = gw.reshape(batch, -1)
            grad[:, b_slot] = dz
        else:
            gw = dz.T @ cache.h_in
            if ds is not None:
                gw += np.einsum("kbo,kbi->oi", ds, cache.p_in)
            if dt is not None:
                gw += np.einsum("kbo,kbi->oi", dt, cache.q_in)
            grad[w_slot] = gw.ravel()
            grad[b_slot] = dz.sum(axis=0)

        a = dz @ W
        b = ds @ W if ds is not None else None
        c = dt @ W if dt is not None else None

    if per_sample:
        return grad
    blocks = GradientBlocks(grad, layout, block_mode)
    if keep_layer_adjoints:
        blocks.layer_adjoints = layer_adjoints[::-1]
    return blocks


def output_adjoint_std(adjoints: ChannelAdjoints) -> float:
    """sigma_out: empirical std of dL/du across the batch."""
    if adjoints.value is None:
        raise ContractError("output adjoint (value channel) is missing")
    value = np.asarray(adjoints.value, dtype=DTYPE)
    if value.size == 0:
        raise DomainError("output adjoint of an empty batch")
    return empirical_std(value)


def initialize(net: MlpNetwork, init: Initializer, rng: SeededRng) -> None:
    """Sample weights with Var = gain^2 / fan; biases zero, norm scale/shift 1/0."""
    for spec, prm in zip(net.layers, net.params):
        gain = spec.activation.default_gain if init.gain is None else init.gain
        fan = spec.in_dim if init.mode == "fan_in" else spec.out_dim
        std = gain / np.sqrt(fan)
        shape = (spec.out_dim, spec.in_dim)
        if init.distribution == "normal":
            prm["weight"] = rng.normal(shape) * std
        else:
            bound = np.sqrt(3.0) * std
            prm["weight"] = rng.uniform(-1.0, 1.0, shape) * bound
        prm["bias"] = np.zeros(spec.out_dim, dtype=DTYPE)
        if spec.norm is not None:
            prm["gamma"] = np.ones(spec.out_dim, dtype=DTYPE)
            prm["beta"] = np.zeros(spec.out_dim, dtype=DTYPE)


@dataclass
class ScaleProfile:
    """Per-layer scale curves for the forward/backward diagnostic."""

    activation_std: List[float]
    adjoint_std: List[float]
    weight_grad_std: List[float]
    weight_grad_std_post: Optional[List[float]] = None
    extra: Dict[str, float] = field(default_factory=dict)

    def grad_ratio(self, post: bool = False) -> float:
        values = self.weight_grad_std_post if post else self.weight_grad_std
        if values is None:
            raise ContractError("no post-processed gradient curve recorded")
        low = min(values)
        return float("inf") if low == 0.0 else max(values) / low

    def rows(self) -> List[Dict[str, float]]:
        rows = []
        for i, (act, adj, g) in enumerate(zip(self.activation_std, self.adjoint_std, self.weight_grad_std)):
            row = {"layer": i, "activation_std": act, "adjoint_std": adj, "weight_grad_std_raw": g}
            if self.weight_grad_std_post is not None:
                row["weight_grad_std_post"] = self.weight_grad_std_post[i]
            rows.append(row)
        return rows


GradientPreprocessor = Callable[[GradientBlocks, float], GradientBlocks]


def scale_probe(
    net: MlpNetwork,
    x_batch: np.ndarray,
    targets: np.ndarray,
    preprocess: Optional[GradientPreprocessor] = None,
) -> ScaleProfile:
    """Forward/backward std per layer for the loss ``0.5 * mean_b |u_b - y_b|^2``.

    ``adjoint_std`` is the std of dL/dh at each layer's output; gradient stds are
    taken per layer block (weights and bias jointly).
    """
    trace = forward(net, x_batch, 0)
    targets = np.asarray(targets, dtype=DTYPE).reshape(trace.u.shape)
    adjoint = ChannelAdjoints(value=(trace.u - targets) / trace.batch_size)
    grads = backward_params(net, trace, adjoint, keep_layer_adjoints=True)
    profile = ScaleProfile(
        activation_std=[empirical_std(c.h_out) for c in trace.layers],
        adjoint_std=[empirical_std(a) for a in grads.layer_adjoints],
        weight_grad_std=grads.sigmas(),
    )
    if preprocess is not None:
        processed = preprocess(grads, output_adjoint_std(adjoint))
        profile.weight_grad_std_post = processed.sigmas()
    return profile
