"""Scenario configuration: parsing, validation, hashing and construction.

A scenario is a plain mapping, usually read from YAML:

    name: sphere-rotation
    model: {kind: sphere, N_x: 128, L: 8.0}
    endpoints:
      phi0: {preset: zero}
      phi1: {preset: rotation, t0: 1.0}
    N_t: 64
    solver: {newton_tol: 1.0e-10, ladder: {max: 0.1, min: 1.0e-4, ratio: 0.5}}
    A_levels: [2, 4, 8, 16]
    analysis: {profiles: true, identity: true, identity_margin: 3.0, reference: auto}
    seed: 0
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import potentials as pot
from .calculus import PathGrid
from .geodesic import SolverConfig, geometric_ladder
from .geometry import FiberModel, build_sphere_model, build_torus_model
from .potentials import softplus

_SOLVER_KEYS = ("newton_tol", "max_newton_iters", "backtrack", "min_step", "cone_margin",
                "guess_cap", "min_substep")
_TOP_KEYS = {"name", "model", "endpoints", "N_t", "solver", "A_levels", "analysis", "seed", "out"}


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending key."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


DEFAULTS = {
    "N_t": 64,
    "A_levels": [2.0, 4.0, 8.0, 16.0],
    "analysis": {"profiles": True, "identity": True, "identity_margin": 3.0, "reference": "auto"},
    "seed": 0,
    "solver": {},
}


def _num(d, key, field, kind=float, positive=True):
    if key not in d:
        raise ScenarioError(field, "missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(field, f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ScenarioError(field, f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ScenarioError(field, f"must be positive, got {v!r}")
    return kind(v)


@dataclass(eq=False)
class Scenario:
    raw: dict
    base: Path

    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def N_t(self) -> int:
        return self.raw["N_t"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def A_levels(self):
        return tuple(self.raw["A_levels"])

    @property
    def analysis(self) -> dict:
        return self.raw["analysis"]

    def canonical(self) -> dict:
        """The hashed content: everything but the output directory."""
        d = copy.deepcopy(self.raw)
        d.pop("out", None)
        for key in ("phi0", "phi1"):
            ep = d["endpoints"][key]
            if "samples" in ep:
                ep["samples_sha256"] = hashlib.sha256(Path(self._resolve(ep["samples"])).read_bytes()).hexdigest()
        if "samples" in d["model"].get("psi0", {}):
            p = self._resolve(d["model"]["psi0"]["samples"])
            d["model"]["psi0"]["samples_sha256"] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()[:16]

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    # -------------------------------------------------------- construction

    def solver_config(self) -> SolverConfig:
        s = self.raw["solver"]
        kw = {k: s[k] for k in _SOLVER_KEYS if k in s}
        lad = s.get("ladder", {})
        if isinstance(lad, list):
            kw["eps_ladder"] = tuple(float(e) for e in lad)
        else:
            kw["eps_ladder"] = geometric_ladder(lad.get("max", 0.1), lad.get("min", 1e-4), lad.get("ratio", 0.5))
        return SolverConfig(**kw)

    def model(self) -> FiberModel:
        m = self.raw["model"]
        if m["kind"] == "sphere":
            return build_sphere_model(m["N_x"], m.get("L", 8.0))
        psi0 = m.get("psi0")
        if psi0 is None:
            return build_torus_model(m["N_x"], np.zeros(m["N_x"]))
        ep = self._endpoint(psi0, "model.psi0", periodic=True, x=np.arange(m["N_x"]) / m["N_x"])
        return build_torus_model(m["N_x"], ep.f)

    def _endpoint(self, d: dict, field: str, periodic: bool, x):
        if "samples" in d:
            path = self._resolve(d["samples"])
            try:
                vals = np.loadtxt(path, delimiter=",", ndmin=1) if path.suffix != ".npy" else np.load(path)
            except OSError as exc:
                raise ScenarioError(field, f"cannot read samples file {path}: {exc}") from None
            vals = np.asarray(vals, dtype=float).ravel()
            if vals.size != x.size:
                raise ScenarioError(field, f"{vals.size} samples for {x.size} nodes")
            return pot.sampled(x, vals, periodic)
        args = {k: v for k, v in d.items() if k != "preset"}
        return pot.PRESETS[d["preset"]](**args)

    def endpoints(self, model: FiberModel):
        e = self.raw["endpoints"]
        return (self._endpoint(e["phi0"], "endpoints.phi0", model.periodic, model.x),
                self._endpoint(e["phi1"], "endpoints.phi1", model.periodic, model.x))

    def build(self):
        model = self.model()
        grid = PathGrid(model, self.N_t)
        ep0, ep1 = self.endpoints(model)
        return model, grid, ep0, ep1

    def exact_limit(self):
        """Closed-form eps = 0 geodesic when one is known, else None.

        Constant endpoints give the affine path; zero and rotation endpoints
        on the sphere give the rotation geodesic.
        """
        e = self.raw["endpoints"]
        p0, p1 = e["phi0"], e["phi1"]
        kinds = (p0.get("preset"), p1.get("preset"))
        val = lambda p: 0.0 if p["preset"] == "zero" else float(p["c"])
        if set(kinds) <= {"zero", "constant"}:
            c0, c1 = val(p0), val(p1)
            return lambda t, x: (1 - t) * c0 + t * c1 + 0.0 * x
        if self.raw["model"]["kind"] == "sphere" and set(kinds) <= {"zero", "rotation"}:
            a0 = 0.0 if kinds[0] == "zero" else 2.0 * float(p0["t0"])
            a1 = 0.0 if kinds[1] == "zero" else 2.0 * float(p1["t0"])
            return lambda t, s: softplus(s + (1 - t) * a0 + t * a1) - softplus(s)
        return None


def _check_endpoint(d, field, base: Path, kind: str):
    if not isinstance(d, dict):
        raise ScenarioError(field, "expected a mapping")
    if "samples" in d:
        p = Path(d["samples"])
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ScenarioError(field, f"samples file {p} not found")
        return
    name = d.get("preset")
    if name not in pot.PRESETS:
        raise ScenarioError(field, f"unknown preset {name!r}; known: {sorted(pot.PRESETS)}")
    need = {"zero": (), "constant": ("c",), "rotation": ("t0",), "cosine": ("amplitude",)}[name]
    for k in need:
        _num(d, k, f"{field}.{k}", positive=False)
    extra = set(d) - {"preset", *need, "k"}
    if extra:
        raise ScenarioError(field, f"unexpected keys {sorted(extra)}")
    if name == "rotation" and kind != "sphere":
        raise ScenarioError(field, "rotation preset needs the sphere model")
    if name == "cosine" and kind != "torus":
        raise ScenarioError(field, "cosine preset needs the torus model")


def validate(raw: dict, base: Path = Path(".")) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario", "expected a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ScenarioError(sorted(unknown)[0], "unknown key")
    d = copy.deepcopy(DEFAULTS)
    d["analysis"].update(raw.get("analysis") or {})
    for k, v in raw.items():
        if k != "analysis":
            d[k] = copy.deepcopy(v)
    if not isinstance(d.get("name"), str) or not d["name"]:
        raise ScenarioError("name", "missing")
    m = d.get("model")
    if not isinstance(m, dict):
        raise ScenarioError("model", "missing")
    if m.get("kind") not in ("torus", "sphere"):
        raise ScenarioError("model.kind", f"expected torus or sphere, got {m.get('kind')!r}")
    m["N_x"] = _num(m, "N_x", "model.N_x", int)
    if m["kind"] == "torus" and m["N_x"] < 16:
        raise ScenarioError("model.N_x", f"torus needs N_x >= 16, got {m['N_x']}")
    if m["kind"] == "sphere":
        if m["N_x"] < 32:
            raise ScenarioError("model.N_x", f"sphere needs N_x >= 32, got {m['N_x']}")
        m["L"] = _num(m, "L", "model.L") if "L" in m else 8.0
        if m["L"] < 5:
            raise ScenarioError("model.L", f"L must be >= 5, got {m['L']}")
        if "psi0" in m:
            raise ScenarioError("model.psi0", "only the torus takes a background potential")
    elif "psi0" in m:
        _check_endpoint(m["psi0"], "model.psi0", base, "torus")
    d["N_t"] = _num(d, "N_t", "N_t", int)
    if d["N_t"] < 8:
        raise ScenarioError("N_t", f"must be >= 8, got {d['N_t']}")
    e = d.get("endpoints")
    if not isinstance(e, dict) or "phi0" not in e or "phi1" not in e:
        raise ScenarioError("endpoints", "need phi0 and phi1")
    for key in ("phi0", "phi1"):
        _check_endpoint(e[key], f"endpoints.{key}", base, m["kind"])
    A = d["A_levels"]
    if not isinstance(A, list) or not A or any(isinstance(a, bool) or not isinstance(a, (int, float)) or a <= 0
                                               for a in A):
        raise ScenarioError("A_levels", "expected a non-empty list of positive numbers")
    d["A_levels"] = [float(a) for a in A]
    if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
        raise ScenarioError("seed", "expected an integer")
    if d["analysis"].get("reference") not in ("auto", "exact", "finest"):
        raise ScenarioError("analysis.reference", "expected auto, exact or finest")
    s = d["solver"]
    if not isinstance(s, dict):
        raise ScenarioError("solver", "expected a mapping")
    bad = set(s) - set(_SOLVER_KEYS) - {"ladder"}
    if bad:
        raise ScenarioError(f"solver.{sorted(bad)[0]}", "unknown key")
    sc = Scenario(d, base)
    try:
        sc.solver_config()
    except (ValueError, TypeError) as exc:
        raise ScenarioError("solver", str(exc)) from None
    return sc


def load(path) -> list:
    """One scenario, or several under a top-level ``scenarios`` list."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ScenarioError("config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ScenarioError("config", f"not valid YAML: {exc}") from None
    items = data.get("scenarios") if isinstance(data, dict) and "scenarios" in data else [data]
    if not isinstance(items, list) or not items:
        raise ScenarioError("scenarios", "expected a non-empty list")
    out = [validate(item, path.parent) for item in items]
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise ScenarioError("name", "scenario names must be unique")
    return out


def builtin(name: str) -> Scenario:
    """Reference scenarios used by the verify suites."""
    table = {
        "torus-zero": {"name": "torus-zero", "model": {"kind": "torus", "N_x": 64}, "N_t": 64,
                       "endpoints": {"phi0": {"preset": "zero"}, "phi1": {"preset": "zero"}},
                       "solver": {"ladder": [0.1, 0.05, 0.025]}},
        "torus-shift": {"name": "torus-shift", "model": {"kind": "torus", "N_x": 64}, "N_t": 64,
                        "endpoints": {"phi0": {"preset": "zero"}, "phi1": {"preset": "constant", "c": 0.7}}},
        "torus-cosine": {"name": "torus-cosine", "model": {"kind": "torus", "N_x": 64,
                                                            "psi0": {"preset": "cosine", "amplitude": 0.005}},
                         "N_t": 64,
                         "endpoints": {"phi0": {"preset": "zero"},
                                       "phi1": {"preset": "cosine", "amplitude": 0.002, "k": 2}}},
        "sphere-rotation": {"name": "sphere-rotation", "model": {"kind": "sphere", "N_x": 128, "L": 8.0},
                            "N_t": 64,
                            "endpoints": {"phi0": {"preset": "zero"}, "phi1": {"preset": "rotation", "t0": 1.0}}},
    }
    if name not in table:
        raise KeyError(name)
    return validate(table[name])


BUILTIN = ("torus-zero", "torus-shift", "torus-cosine", "sphere-rotation")
