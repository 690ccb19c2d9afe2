"""Space-time grid, stencils, quadrature and PathField persistence."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import FiberModel

MAGIC = b"EPSPATH1"


@dataclass(frozen=True, eq=False)
class PathGrid:
    model: FiberModel
    N_t: int

    def __post_init__(self):
        if self.N_t < 8:
            raise ValueError(f"N_t={self.N_t} below minimum 8")

    @property
    def t(self):
        return np.linspace(0.0, 1.0, self.N_t + 1)

    @property
    def ht(self) -> float:
        return 1.0 / self.N_t

    @property
    def hx(self) -> float:
        return self.model.h

    @property
    def shape(self):
        return (self.N_t + 1, self.model.n)

    @property
    def cols(self) -> slice:
        """Fiber columns carrying unknowns (all on the torus, inner ones on the sphere)."""
        return slice(None) if self.model.periodic else slice(1, -1)

    @property
    def interior_shape(self):
        nx = self.model.n if self.model.periodic else self.model.n - 2
        return (self.N_t - 1, nx)


@dataclass(eq=False)
class PathField:
    values: np.ndarray
    grid: PathGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")

    def row(self, i: int):
        return self.values[i]


def _padded(grid: PathGrid, P):
    """Add one ghost column per side on the torus so every stencil is a plain slice."""
    if grid.model.periodic:
        return np.concatenate([P[:, -1:], P, P[:, :1]], axis=1)
    return P


def d_tt(grid: PathGrid, P):
    Q = _padded(grid, np.asarray(P, dtype=float))
    return (Q[2:, 1:-1] - 2.0 * Q[1:-1, 1:-1] + Q[:-2, 1:-1]) / grid.ht ** 2


def d_xx(grid: PathGrid, P):
    Q = _padded(grid, np.asarray(P, dtype=float))
    return (Q[1:-1, 2:] - 2.0 * Q[1:-1, 1:-1] + Q[1:-1, :-2]) / grid.hx ** 2


def d_tx(grid: PathGrid, P):
    Q = _padded(grid, np.asarray(P, dtype=float))
    return (Q[2:, 2:] - Q[2:, :-2] - Q[:-2, 2:] + Q[:-2, :-2]) / (4.0 * grid.ht * grid.hx)


def integrate_fiber(model: FiberModel, g) -> float:
    """Integral of g against the background volume w dx."""
    return model.integrate(np.asarray(g, dtype=float) * model.w)


def l2_fiber(model: FiberModel, g) -> float:
    g = np.asarray(g, dtype=float)
    return float(np.sqrt(integrate_fiber(model, g * g)))


def time_weights(N_t: int):
    q = np.full(N_t + 1, 1.0 / N_t)
    q[0] = q[-1] = 0.5 / N_t
    return q


def integrate_path(grid: PathGrid, G) -> float:
    """Trapezoid in t of the fiber integrals against w dx."""
    G = np.asarray(G, dtype=float)
    per_slice = (G * grid.model.w) @ grid.model.weights
    return float(time_weights(grid.N_t) @ per_slice)


def write_field(path, values) -> None:
    """Little-endian binary: 8 magic bytes, two uint64 dims, row-major float64."""
    a = np.ascontiguousarray(values, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("PathField binary stores 2-D arrays")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_field(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head != MAGIC:
            raise ValueError(f"{path}: bad magic {head!r}")
        n0, n1 = struct.unpack("<QQ", fh.read(16))
        data = fh.read()
    if len(data) != 8 * n0 * n1:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype="<f8").reshape(n0, n1).astype(float)


def field_csv(grid: PathGrid, values) -> str:
    buf = io.StringIO()
    buf.write("t,x,value\n")
    t = grid.t
    x = grid.model.x
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            buf.write(f"{t[i]!r},{x[j]!r},{values[i, j]!r}\n")
    return buf.getvalue()


def write_field_csv(path, grid: PathGrid, values) -> None:
    Path(path).write_text(field_csv(grid, values))
