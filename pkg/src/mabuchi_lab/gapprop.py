"""Synthetic checks of the gap proposition on [0,1]^m grids, m = 1, 2, 3.

A family is a finite sequence f_l sampled on an N^m grid together with its
limit f, a truncation level kappa, the gap constant kappa0 and a claimed
bound C on the masked Dirichlet energy int_{f_l > kappa} |grad f_l|^2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

CONSISTENT = "consistent"
HYPOTHESIS = "hypothesis-violated"
VIOLATED = "CONCLUSION-VIOLATED"
ZERO_TOL = 1e-12


@dataclass(eq=False)
class GridFunctionFamily:
    m: int
    N: int
    members: list
    limit: np.ndarray
    kappa: np.ndarray
    kappa0: float
    C: float
    sup_bound: float = np.inf
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m not in (1, 2, 3):
            raise ValueError(f"m={self.m} not in 1..3")
        if self.N < 3:
            raise ValueError("need at least 3 nodes per axis")
        shape = (self.N,) * self.m
        self.limit = np.asarray(self.limit, dtype=float)
        self.members = [np.asarray(f, dtype=float) for f in self.members]
        self.kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), shape)
        if not self.members:
            raise ValueError("family has no members")
        for f in [self.limit, *self.members]:
            if f.shape != shape:
                raise ValueError(f"sample shape {f.shape} != {shape}")
            if np.any(f < -ZERO_TOL) or np.any(f > self.sup_bound):
                raise ValueError("samples outside [0, sup_bound]")
        if not self.kappa.max() < self.kappa0 / 4:
            raise ValueError(f"max kappa={self.kappa.max():g} must be below kappa0/4={self.kappa0 / 4:g}")

    @property
    def h(self) -> float:
        return 1.0 / (self.N - 1)

    @property
    def axis(self):
        return np.linspace(0.0, 1.0, self.N)

    @property
    def null_count(self) -> int:
        """A node set this small counts as measure zero."""
        return self.m * self.N ** (self.m - 1)

    def integrate(self, g) -> float:
        w = np.full(self.N, self.h)
        w[0] = w[-1] = self.h / 2
        out = np.asarray(g, dtype=float)
        for _ in range(self.m):
            out = out @ w if out.ndim == 1 else np.tensordot(out, w, axes=([out.ndim - 1], [0]))
        return float(out)

    def grad_sq(self, f):
        g = np.gradient(f, self.h) if self.m > 1 else [np.gradient(f, self.h)]
        return sum(gi * gi for gi in g)

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "N": self.N, "kappa0": self.kappa0, "C": self.C, **self.spec},
                          sort_keys=True)


@dataclass
class Verdict:
    verdict: str
    energies: list
    l2: list
    bad_gap_nodes: int
    zero_nodes: int
    positive_nodes: int
    null_count: int
    hypothesis_ok: bool

    def to_dict(self):
        return dict(self.__dict__)


def l2_distances(fam: GridFunctionFamily) -> list:
    return [np.sqrt(fam.integrate((f - fam.limit) ** 2)) for f in fam.members]


def masked_energies(fam: GridFunctionFamily) -> list:
    return [fam.integrate(np.where(f > fam.kappa, fam.grad_sq(f), 0.0)) for f in fam.members]


def verify_prop_nd001(fam: GridFunctionFamily, l2_floor: float = 1e-8) -> Verdict:
    """Hypothesis first, then the conclusion f > kappa0 a.e. at grid resolution.

    The members must approach the limit: L^2 distances non-increasing and
    the last one strictly below the first, unless all are below l2_floor.
    """
    l2 = l2_distances(fam)
    d = np.asarray(l2)
    if np.any(np.diff(d) > 1e-12 * (1 + d[:-1])) or (d.max() > l2_floor and not d[-1] < d[0]):
        raise ValueError(f"members do not converge to the limit in L^2: {[f'{v:.3g}' for v in l2]}")
    E = masked_energies(fam)
    f = fam.limit
    zero = f <= ZERO_TOL
    pos = f > fam.kappa0
    bad = int((~zero & ~pos).sum())
    hyp = all(e < fam.C for e in E) and bool(pos.any())
    if not hyp:
        verdict = HYPOTHESIS
    elif bad > 0 or int(zero.sum()) > fam.null_count:
        verdict = VIOLATED
    else:
        verdict = CONSISTENT
    return Verdict(verdict, E, l2, bad, int(zero.sum()), int(pos.sum()), fam.null_count, hyp)


def slice_decompose(fam: GridFunctionFamily, axis: int = -1):
    """Sub-families on the slices x_axis = y and F_l(y) = int_{X_y} |f_l - f|^2."""
    if fam.m < 2:
        raise ValueError("slicing needs m >= 2")
    ax = axis % fam.m
    subs = []
    for j in range(fam.N):
        take = lambda a: np.take(a, j, axis=ax)
        subs.append(GridFunctionFamily(fam.m - 1, fam.N, [take(f) for f in fam.members], take(fam.limit),
                                       take(fam.kappa), fam.kappa0, fam.C, fam.sup_bound,
                                       {**fam.spec, "slice": [ax, j]}))
    F = np.array([[s.integrate((s.members[i] - s.limit) ** 2) for s in subs]
                  for i in range(len(fam.members))])
    return subs, F


def distance_check(P, Q, x=None) -> float:
    """Smallest node distance between two disjoint masks covering the grid up to a null set."""
    P = np.asarray(P, dtype=bool)
    Q = np.asarray(Q, dtype=bool)
    if P.shape != Q.shape or P.ndim != 1:
        raise ValueError("masks must be 1-D of equal length")
    if np.any(P & Q):
        raise ValueError("masks are not disjoint")
    if not P.any() or not Q.any():
        raise ValueError("masks must be non-empty")
    if int((~(P | Q)).sum()) > 1:
        raise ValueError("union of the masks is not co-null")
    x = np.linspace(0.0, 1.0, P.size) if x is None else np.asarray(x, dtype=float)
    xp, xq = np.sort(x[P]), x[Q]
    i = np.clip(np.searchsorted(xp, xq), 1, xp.size - 1) if xp.size > 1 else np.zeros(xq.size, int)
    d = np.minimum(np.abs(xq - xp[i]), np.abs(xq - xp[np.maximum(i - 1, 0)]))
    return float(d.min())


@dataclass
class HolderCheck:
    a: float
    b: float
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs > self.rhs


def holder_bound_check(u, k: float, t=None) -> HolderCheck:
    """|b - a| against k^2 / int_a^b (u')^2 with a the first node where u > 2k
    and b the last later node where u < k."""
    u = np.asarray(u, dtype=float)
    t = np.linspace(0.0, 1.0, u.size) if t is None else np.asarray(t, dtype=float)
    hi = np.flatnonzero(u > 2 * k)
    if hi.size == 0:
        raise ValueError("hypothesis unmet: u never exceeds 2k")
    ia = int(hi[0])
    lo = np.flatnonzero(u[ia:] < k)
    if lo.size == 0:
        raise ValueError("hypothesis unmet: u never drops below k after exceeding 2k")
    ib = ia + int(lo[-1])
    du = np.gradient(u, t)
    energy = float(np.trapezoid(du[ia:ib + 1] ** 2, t[ia:ib + 1]))
    return HolderCheck(float(t[ia]), float(t[ib]), float(t[ib] - t[ia]), k * k / energy)


# ---------------------------------------------------------------- families

def _mesh(m: int, N: int):
    ax = np.linspace(0.0, 1.0, N)
    return np.meshgrid(*([ax] * m), indexing="ij")


def constant_family(m: int, N: int = 129, value: float = 1.0, kappa0: float = 0.5,
                    kappa: float = 0.1, C: float = 1.0, members: int = 4) -> GridFunctionFamily:
    f = np.full((N,) * m, float(value))
    return GridFunctionFamily(m, N, [f.copy() for _ in range(members)], f, kappa, kappa0, C,
                              spec={"family": "constant", "value": value, "kappa": kappa})


def smooth_family(m: int, N: int = 129, kappa0: float = 0.5, kappa: float = 0.1, C: float = 10.0,
                  ells=(1, 2, 4, 8, 16)) -> GridFunctionFamily:
    """f = 1 + 0.5 prod sin(pi x_i) and f_l = f + cos(2 pi x_1)/(4 l)."""
    X = _mesh(m, N)
    f = 1.0 + 0.5 * np.prod([np.sin(np.pi * x) for x in X], axis=0)
    mem = [f + np.cos(2 * np.pi * X[0]) / (4 * ell) for ell in ells]
    return GridFunctionFamily(m, N, mem, f, kappa, kappa0, C,
                              spec={"family": "smooth", "ells": list(ells), "kappa": kappa})


def product_family(g_members, g_limit, m: int, kappa0: float, kappa: float, C: float, spec=None):
    """Extend a 1-D family constantly in the other m - 1 variables."""
    N = len(g_limit)
    ext = lambda g: np.broadcast_to(np.asarray(g, float).reshape((N,) + (1,) * (m - 1)), (N,) * m).copy()
    return GridFunctionFamily(m, N, [ext(g) for g in g_members], ext(g_limit), kappa, kappa0, C,
                              spec={**(spec or {}), "product_of_1d": True})


def step_family(m: int, N: int = 129, kappa0: float = 0.9, kappa: float = 0.05, C: float = 2.0,
                ells=(4, 8, 16, 32, 64), axis: int = 0) -> GridFunctionFamily:
    """Smoothed unit step of width 1/l in x_axis, centred between two nodes.

    The masked energy grows like l/3, so for large l the hypothesis fails;
    the limit has both a zero set and a positive set.
    """
    X = _mesh(m, N)
    c = 0.5 + 0.5 / (N - 1)
    y = X[axis] - c
    mem = [expit(2 * ell * y) for ell in ells]
    f = (y > 0).astype(float)
    return GridFunctionFamily(m, N, mem, f, kappa, kappa0, C,
                              spec={"family": "step", "ells": list(ells), "axis": axis, "kappa": kappa})


def hole_family(m: int, N: int = 129, kappa0: float = 0.9, kappa: float = 0.05, C: float = 2.0,
                ells=(4, 8, 16, 32, 64), radius: float = 0.25) -> GridFunctionFamily:
    """Limit vanishes on a centred ball and equals 1 outside; members are smoothed."""
    X = _mesh(m, N)
    r = np.sqrt(sum((x - 0.5) ** 2 for x in X))
    mem = [expit(2 * ell * (r - radius)) for ell in ells]
    f = (r > radius).astype(float)
    return GridFunctionFamily(m, N, mem, f, kappa, kappa0, C,
                              spec={"family": "hole", "ells": list(ells), "radius": radius, "kappa": kappa})


def positive_families(N: int = 129):
    out = []
    for m in (1, 2, 3):
        out.append(constant_family(m, N))
        out.append(smooth_family(m, N))
    return out


def negative_families(N: int = 129):
    out = []
    for m in (1, 2, 3):
        out.append(step_family(m, N))
        out.append(hole_family(m, N))
    return out
