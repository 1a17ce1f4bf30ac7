"""Reference solutions on grids and their on-disk format.

Burgers references come from the Cole-Hopf closed form (Gauss-Hermite
quadrature, log-sum-exp stabilized) or from a method-of-lines solver
(second-order central differences, classical RK4). Poisson and Helmholtz use
their manufactured exact solutions.

File layout (little endian)::

    0   8 bytes   magic b"SGREF01\\n"
    8   uint64    header length H
    16  H bytes   UTF-8 JSON header {"kind", "axes", "dims", "bounds", "params"}
    ..  float64   axis coordinates, axis after axis
    ..  float64   field values, C order, shape = dims
"""
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from stablegrad.core.linalg import DTYPE
from stablegrad.utils.exceptions import ConfigError, DomainError, FileOperationError, ReferenceFormatError

MAGIC = b"SGREF01\n"
HEADER_KEYS = ("kind", "axes", "dims", "bounds", "params")

# Closed-form Burgers is used at and above this viscosity; MOL below.
COLE_HOPF_MIN_NU = 0.05
HERMITE_NODES = 200

# Stability intervals of classical RK4 on the negative real / imaginary axis.
RK4_REAL_LIMIT = 2.785
RK4_IMAG_LIMIT = 2.828


@dataclass
class GriddedField:
    """Scalar field sampled on a tensor-product grid (``values[i, j, ...]`` at ``axes[0][i], axes[1][j], ...``)."""

    kind: str
    axis_names: List[str]
    axes: List[np.ndarray]
    values: np.ndarray
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=DTYPE) for a in self.axes]
        self.values = np.asarray(self.values, dtype=DTYPE)
        dims = tuple(len(a) for a in self.axes)
        if self.values.shape != dims:
            raise DomainError(f"field values have shape {self.values.shape}, grid is {dims}")

    @property
    def dims(self) -> List[int]:
        return [len(a) for a in self.axes]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# Exact / closed-form solutions
# ---------------------------------------------------------------------------

def poisson_exact(points: np.ndarray) -> np.ndarray:
    """u*(x, y) = sin(pi x) sin(pi y) on [0, 1]^2."""
    return np.sin(np.pi * points[:, 0]) * np.sin(np.pi * points[:, 1])


def helmholtz_exact(points: np.ndarray, m: int) -> np.ndarray:
    """u*(x, y, z) = sin(m pi x) sin(m pi y) sin(m pi z) on [0, 1]^3."""
    w = m * np.pi
    return np.sin(w * points[:, 0]) * np.sin(w * points[:, 1]) * np.sin(w * points[:, 2])


def cole_hopf_burgers(nu: float, x: np.ndarray, t: np.ndarray, nodes: int = HERMITE_NODES) -> np.ndarray:
    """Viscous Burgers solution for u(x, 0) = -sin(pi x), evaluated pointwise.

    ``x`` and ``t`` broadcast against each other.
    """
    if nu <= 0:
        raise ConfigError(f"viscosity must be positive, got {nu}")
    x, t = np.broadcast_arrays(np.asarray(x, dtype=DTYPE), np.asarray(t, dtype=DTYPE))
    s, w = np.polynomial.hermite.hermgauss(nodes)
    c = 2.0 * np.sqrt(nu * np.maximum(t, 0.0))[..., None]
    y = x[..., None] - c * s
    expo = -np.cos(np.pi * y) / (2.0 * np.pi * nu)
    expo -= expo.max(axis=-1, keepdims=True)
    weights = w * np.exp(expo)
    u = -np.sum(weights * np.sin(np.pi * y), axis=-1) / np.sum(weights, axis=-1)
    return np.where(t <= 0.0, -np.sin(np.pi * x), u)


def mol_step_bound(nu: float, dx: float, max_speed: float = 1.0, advection: bool = True) -> float:
    """Largest stable RK4 step for central-difference viscous Burgers."""
    bound = RK4_REAL_LIMIT * dx * dx / (4.0 * nu)
    if advection and max_speed > 0:
        bound = min(bound, RK4_IMAG_LIMIT * dx / max_speed)
    return bound


def method_of_lines_burgers(
    nu: float,
    nx: int,
    times: Sequence[float],
    dt: Optional[float] = None,
    advection: bool = True,
) -> np.ndarray:
    """Solve Burgers on ``linspace(-1, 1, nx)`` with u(+-1, t) = 0.

    Returns values of shape ``(nx, len(times))``. ``times`` must start at 0 and
    increase. A ``dt`` above the stability bound is a ConfigError.
    """
    if nu <= 0:
        raise ConfigError(f"viscosity must be positive, got {nu}")
    times = np.asarray(times, dtype=DTYPE)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ConfigError("snapshot times must start at 0 and be strictly increasing")
    x = np.linspace(-1.0, 1.0, nx)
    dx = x[1] - x[0]
    bound = mol_step_bound(nu, dx, 1.0, advection)
    if dt is not None and dt > bound:
        raise ConfigError(f"time step {dt:.3e} violates the stability bound; require dt <= {bound:.3e}")
    target = 0.5 * bound if dt is None else dt

    def rhs(u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        lap = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (dx * dx)
        out[1:-1] = nu * lap
        if advection:
            out[1:-1] -= u[1:-1] * (u[2:] - u[:-2]) / (2.0 * dx)
        return out

    u = -np.sin(np.pi * x)
    u[0] = u[-1] = 0.0
    out = np.empty((nx, len(times)), dtype=DTYPE)
    out[:, 0] = u
    for j in range(1, len(times)):
        span = times[j] - times[j - 1]
        steps = max(1, math.ceil(span / target))
        h = span / steps
        for _ in range(steps):
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * h * k1)
            k3 = rhs(u + 0.5 * h * k2)
            k4 = rhs(u + h * k3)
            u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, j] = u
    return out


def burgers_reference(
    nu: float,
    x: np.ndarray,
    t: np.ndarray,
    method: str = "auto",
    dt: Optional[float] = None,
) -> GriddedField:
    """Gridded Burgers field; Cole-Hopf for nu >= 0.05 unless MOL is forced."""
    if nu <= 0:
        raise ConfigError(f"viscosity must be positive, got {nu}")
    x = np.asarray(x, dtype=DTYPE)
    t = np.asarray(t, dtype=DTYPE)
    if method == "auto":
        method = "cole_hopf" if nu >= COLE_HOPF_MIN_NU else "mol"
    if method == "cole_hopf":
        values = cole_hopf_burgers(nu, x[:, None], t[None, :])
    elif method == "mol":
        if not np.allclose(x, np.linspace(-1.0, 1.0, len(x))):
            raise ConfigError("method-of-lines reference needs a uniform x grid spanning [-1, 1]")
        values = method_of_lines_burgers(nu, len(x), t, dt=dt)
    else:
        raise ConfigError(f"unknown Burgers reference method '{method}'")
    return GriddedField("burgers1d", ["x", "t"], [x, t], values, {"nu": nu, "method": method})


def exact_reference(kind: str, resolution: int, m: int = 10) -> GriddedField:
    """Manufactured-solution field on a uniform grid over the unit box."""
    axis = np.linspace(0.0, 1.0, resolution)
    if kind == "poisson2d":
        ref = GriddedField(kind, ["x", "y"], [axis, axis], np.zeros((resolution, resolution)))
        ref.values = poisson_exact(ref.points()).reshape(ref.dims)
        return ref
    if kind == "helmholtz":
        dims = (resolution,) * 3
        ref = GriddedField(kind, ["x", "y", "z"], [axis, axis, axis], np.zeros(dims), {"m": m})
        ref.values = helmholtz_exact(ref.points(), m).reshape(dims)
        return ref
    raise ConfigError(f"no closed-form reference for problem '{kind}'")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _json_safe(params: Dict[str, Any]) -> Dict[str, Any]:
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in params.items()}


def export_reference(ref: GriddedField, path: Union[str, Path]) -> Path:
    path = Path(path)
    header = {
        "kind": ref.kind,
        "axes": list(ref.axis_names),
        "dims": ref.dims,
        "bounds": [[float(a[0]), float(a[-1])] for a in ref.axes],
        "params": _json_safe(ref.params),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for a in ref.axes:
                f.write(a.astype("<f8").tobytes())
            f.write(ref.values.astype("<f8").tobytes())
    except OSError as e:
        raise FileOperationError(f"Could not write reference file {path}: {e}") from e
    return path


def load_reference(path: Union[str, Path]) -> GriddedField:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FileOperationError(f"Could not read reference file {path}: {e}") from e

    if raw[:len(MAGIC)] != MAGIC:
        raise ReferenceFormatError("bad magic, not a reference file", 0)
    if len(raw) < 16:
        raise ReferenceFormatError("truncated header length", 8)
    (length,) = struct.unpack("<Q", raw[8:16])
    if 16 + length > len(raw):
        raise ReferenceFormatError(f"header length {length} exceeds file size {len(raw)}", 8)
    try:
        header = json.loads(raw[16:16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ReferenceFormatError(f"unreadable header: {e}", 16) from e

    missing = [k for k in HEADER_KEYS if not isinstance(header, dict) or k not in header]
    if missing:
        raise ReferenceFormatError(f"header is missing {missing}", 16)
    dims = header["dims"]
    if (
        not isinstance(dims, list)
        or not dims
        or not all(isinstance(n, int) and n > 0 for n in dims)
        or len(dims) != len(header["axes"])
        or len(dims) != len(header["bounds"])
    ):
        raise ReferenceFormatError(f"invalid dims {dims!r}", 16)

    offset = 16 + length
    expected = 8 * (sum(dims) + int(np.prod(dims)))
    if len(raw) - offset != expected:
        raise ReferenceFormatError(
            f"payload has {len(raw) - offset} bytes, header dims {dims} require {expected}", offset
        )
    data = np.frombuffer(raw, dtype="<f8", offset=offset).astype(DTYPE)
    axes = []
    pos = 0
    for n in dims:
        axes.append(data[pos:pos + n].copy())
        pos += n
    for i, (a, (lo, hi)) in enumerate(zip(axes, header["bounds"])):
        if a[0] != lo or a[-1] != hi:
            raise ReferenceFormatError(f"axis {i} does not match header bounds", offset)
    values = data[pos:].reshape(dims).copy()
    return GriddedField(header["kind"], list(header["axes"]), axes, values, dict(header["params"]))
