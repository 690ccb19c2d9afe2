"""The truncated entropy density h_kappa(x) = max(x log x, x log kappa) and the
four-case lower bounds along u_t = a t + b.

Scalar functions take a CasePoint; the randomized suites use the vectorized
``*_v`` versions on whole sample batches.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

MARGIN_TOL = 1e-12
CASES = ("i", "ii", "iii", "iv")


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def h_kappa(x, kappa: float):
    """max(x log x, x log kappa) with h(0) = 0."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("h_kappa is defined for x >= 0")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    out = np.maximum(_xlogx(xa), xa * np.log(kappa))
    return float(out) if out.ndim == 0 else out


def h_kappa_prime(x: float, kappa: float) -> float:
    if x == kappa:
        raise ValueError("h_kappa is not differentiable at x = kappa")
    if x < 0:
        raise ValueError("h_kappa is defined for x >= 0")
    return float(np.log(kappa)) if x < kappa else 1.0 + float(np.log(x))


@dataclass(frozen=True)
class CasePoint:
    """u_t = a t + b at one fiber point: b = f, a + b = f_l."""
    a: float
    b: float
    kappa: float
    kappa0: float
    C: float

    def __post_init__(self):
        tol = 1e-12 * max(1.0, self.C)
        if not (-tol <= self.b <= self.C + tol and -tol <= self.a + self.b <= self.C + tol):
            raise ValueError(f"u_t leaves [0, C]: a={self.a!r}, b={self.b!r}, C={self.C!r}")
        if not 0 < self.kappa < self.kappa0 / 2:
            raise ValueError(f"need 0 < kappa < kappa0/2, got kappa={self.kappa!r}, kappa0={self.kappa0!r}")

    @property
    def t0(self) -> Optional[float]:
        return None if self.a == 0 else (self.kappa - self.b) / self.a

    @property
    def case(self) -> str:
        return classify_case(self)


def classify_case(p: CasePoint) -> str:
    f, fl, k = p.b, p.a + p.b, p.kappa
    if f == 0:
        return "ii" if fl <= k else "iii"
    if f > k:
        return "i" if fl >= k else "iv"
    raise ValueError(f"outside gap structure: 0 < f = {f!r} <= kappa = {k!r}")


def F_prime0(p: CasePoint) -> float:
    """F'(0) from the branch of u_0 = b: a log kappa below kappa, a log b + a above."""
    if p.b < p.kappa:
        return p.a * float(np.log(p.kappa))
    return p.a * float(np.log(p.b)) + p.a


def case_lower_bound(p: CasePoint, case: Optional[str] = None) -> float:
    case = case or classify_case(p)
    if case == "i":
        return p.a ** 2 / (2 * p.C)
    if case == "ii":
        return 0.0
    if case == "iii":
        return p.a ** 2 / (2 * p.C) - p.kappa
    return p.kappa0 ** 2 / (8 * p.C) - p.kappa


def increment(p: CasePoint) -> float:
    """h(a + b) - h(b) - F'(0) by direct branch evaluation."""
    return h_kappa(p.a + p.b, p.kappa) - h_kappa(p.b, p.kappa) - F_prime0(p)


def ftc_increment(p: CasePoint) -> float:
    """int_0^1 int_0^t F'' ds dt from the piecewise form of F''.

    The smooth part a^2/(a s + b) on {u_s > kappa} is integrated against
    (1 - s) with the exact antiderivative (a + b) log u - u in u = a s + b;
    the Dirac mass at t0 contributes |a| (1 - t0).
    """
    a, b, k = p.a, p.b, p.kappa
    if a == 0:
        return 0.0
    t0 = (k - b) / a
    # interval of s in [0, 1] with u_s > kappa
    if a > 0:
        lo, hi = max(0.0, t0), 1.0
    else:
        lo, hi = 0.0, min(1.0, t0)
    smooth = 0.0
    if hi > lo:
        u1, u2 = a * lo + b, a * hi + b
        smooth = (a + b) * np.log(u2 / u1) - (u2 - u1)
    dirac = abs(a) * (1.0 - t0) if 0.0 < t0 < 1.0 else 0.0
    return float(smooth + dirac)


def verify_case_inequality(p: CasePoint, nodes: int = 0) -> float:
    """Increment minus the case bound; must be >= -1e-12.

    With nodes > 0 the FTC form is cross-checked on that many Gauss-Legendre
    nodes per smooth piece and the smaller of the two margins is returned.
    """
    case = classify_case(p)
    bound = case_lower_bound(p, case)
    margin = increment(p) - bound
    if nodes > 0:
        margin = min(margin, _ftc_gauss(p, nodes) - bound)
    return float(margin)


def _ftc_gauss(p: CasePoint, nodes: int) -> float:
    a, b, k = p.a, p.b, p.kappa
    if a == 0:
        return 0.0
    t0 = (k - b) / a
    lo, hi = (max(0.0, t0), 1.0) if a > 0 else (0.0, min(1.0, t0))
    total = 0.0
    if hi > lo:
        z, wq = np.polynomial.legendre.leggauss(nodes)
        s = 0.5 * (hi - lo) * z + 0.5 * (hi + lo)
        total = 0.5 * (hi - lo) * float(wq @ ((1 - s) * a * a / (a * s + b)))
    if 0.0 < t0 < 1.0:
        total += abs(a) * (1.0 - t0)
    return total


# ---------------------------------------------------------------- vectorized suite

def increment_v(a, b, kappa):
    fl = a + b
    hk = lambda x: np.maximum(_xlogx(x), x * np.log(kappa))
    with np.errstate(divide="ignore", invalid="ignore"):
        fp0 = np.where(b < kappa, a * np.log(kappa), a * np.log(np.where(b > 0, b, 1.0)) + a)
    return hk(fl) - hk(b) - fp0


def bound_v(case: str, a, b, kappa, kappa0, C):
    if case == "i":
        return a * a / (2 * C)
    if case == "ii":
        return np.zeros_like(a)
    if case == "iii":
        return a * a / (2 * C) - kappa
    return np.full_like(a, kappa0 ** 2 / (8 * C) - kappa)


def sample_case(case: str, n: int, rng: np.random.Generator, kappa0: float = 0.5, C: float = 2.0):
    """Admissible (a, b, kappa) for one case under the gap structure b in {0} U [kappa0, C]."""
    kappa = kappa0 / 2 * rng.uniform(1e-6, 1.0, n) * (1 - 1e-9)
    if case == "i":
        b = rng.uniform(kappa0, C, n)
        fl = rng.uniform(kappa, C)
    elif case == "ii":
        b = np.zeros(n)
        fl = rng.uniform(0.0, 1.0, n) * kappa
    elif case == "iii":
        b = np.zeros(n)
        fl = rng.uniform(kappa, C)
        fl = np.where(fl > kappa, fl, np.nextafter(kappa, np.inf))
    elif case == "iv":
        b = rng.uniform(kappa0, C, n)
        fl = rng.uniform(0.0, 1.0, n) * kappa
    else:
        raise ValueError(f"unknown case {case!r}")
    return fl - b, b, kappa


@dataclass
class CaseSuiteResult:
    seed: int
    samples: int
    kappa0: float
    C: float
    min_margin: dict
    violations: dict
    seconds: float

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.violations.values())

    def to_dict(self) -> dict:
        return {"suite": "maxfun-cases", "seed": self.seed, "samples_per_case": self.samples,
                "kappa0": self.kappa0, "C": self.C, "min_margin": self.min_margin,
                "violations": self.violations, "passed": self.passed,
                "lemma_constants": lemma_constants(self.C, self.kappa0)}


def run_case_suite(seed: int = 20240611, samples: int = 100_000, kappa0: float = 0.5,
                   C: float = 2.0) -> CaseSuiteResult:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mins, bad = {}, {}
    for case in CASES:
        a, b, k = sample_case(case, samples, rng, kappa0, C)
        margin = increment_v(a, b, k) - bound_v(case, a, b, k, kappa0, C)
        mins[case] = float(margin.min())
        bad[case] = int((margin < -MARGIN_TOL).sum())
    return CaseSuiteResult(seed, samples, kappa0, C, mins, bad, time.perf_counter() - start)


def lemma_constants(C: float, kappa0: float) -> dict:
    """The three constants in front of max kappa that appear for the L^2 bound."""
    return {
        "2+8C/k0": 2 + 8 * C / kappa0,
        "2+8C^3/k0": 2 + 8 * C ** 3 / kappa0,
        "2+8C^3/k0^2": 2 + 8 * C ** 3 / kappa0 ** 2,
    }


def weakest_lemma_constant(C: float, kappa0: float) -> float:
    return max(lemma_constants(C, kappa0).values())
