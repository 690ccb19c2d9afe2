"""Batch driver: solve, analyze and report for scenarios, plus verify suites.

Layout of one scenario's output directory:

    manifest.json          scenario hash, canonical scenario, rung index
    rung_00.bin/.json      PathField binary and its sidecar, one pair per rung
    analysis/              report.json, report.csv, profiles_*.csv, summary.txt
    plots/                 long-format CSV for external plotting

Everything written is a deterministic function of the scenario and seed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis as an
from . import gapprop, maxfun
from .calculus import PathField, PathGrid, read_field, write_field
from .functionals import mabuchi_profile
from .geodesic import SolveResult, SolverConfig, SolverError, continuation, endpoints_digest
from .geometry import build_sphere_model
from .potentials import rotation, zero
from .scenarios import Scenario

log = logging.getLogger(__name__)


class StateError(RuntimeError):
    """Stored results missing or not matching the scenario."""


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=an._jsonable) + "\n")


# ---------------------------------------------------------------- solve

def solve(sc: Scenario, out: Path) -> list:
    model, grid, ep0, ep1 = sc.build()
    config = sc.solver_config()
    out.mkdir(parents=True, exist_ok=True)
    rungs = []

    def save(res: SolveResult):
        stem = f"rung_{res.rung:02d}"
        write_field(out / f"{stem}.bin", res.values)
        _dump(out / f"{stem}.json", res.sidecar(config))
        rungs.append({"rung": res.rung, "eps": res.eps, "field": f"{stem}.bin", "sidecar": f"{stem}.json"})

    results = continuation(grid, ep0, ep1, config, on_rung=save)
    _dump(out / "manifest.json", {
        "scenario": sc.canonical(),
        "scenario_hash": sc.digest(),
        "model_hash": model.model_hash(),
        "endpoints_hash": endpoints_digest(grid, ep0, ep1),
        "grid": {"N_t": grid.N_t, "n": model.n},
        "rungs": rungs,
    })
    return results


def load_results(sc: Scenario, out: Path) -> list:
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise StateError(f"no results at {out}")
    man = json.loads(mpath.read_text())
    if man.get("scenario_hash") != sc.digest():
        raise StateError(f"{out}: results belong to scenario hash {man.get('scenario_hash')}, "
                         f"config has {sc.digest()}")
    model, grid, ep0, ep1 = sc.build()
    if man.get("model_hash") != model.model_hash():
        raise StateError(f"{out}: model hash mismatch")
    ehash = endpoints_digest(grid, ep0, ep1)
    expected = sc.solver_config().eps_ladder
    if len(man["rungs"]) != len(expected):
        raise StateError(f"{out}: {len(man['rungs'])} rungs stored, ladder has {len(expected)}")
    results = []
    for entry in man["rungs"]:
        f = out / entry["field"]
        s = out / entry["sidecar"]
        if not f.exists() or not s.exists():
            raise StateError(f"missing rung file {f.name if not f.exists() else s.name}")
        side = json.loads(s.read_text())
        try:
            values = read_field(f)
        except ValueError as exc:
            raise StateError(str(exc)) from None
        if values.shape != grid.shape:
            raise StateError(f"{f.name}: shape {values.shape} != {grid.shape}")
        results.append(SolveResult(PathField(values, grid), float(entry["eps"]), side["residual_history"],
                                   side["iterations"], side["cone_report"], ehash, entry["rung"],
                                   side.get("substeps", 0), side.get("proxies", {})))
    return results


# ---------------------------------------------------------------- analyze

def _reference(sc: Scenario):
    mode = sc.analysis["reference"]
    exact = sc.exact_limit()
    if mode == "finest" or (mode == "auto" and exact is None):
        return None
    if exact is None:
        raise StateError("analysis.reference = exact but no closed-form limit is known for this scenario")
    return exact


def analyze(sc: Scenario, out: Path) -> dict:
    results = load_results(sc, out)
    model = results[0].model
    adir = out / "analysis"
    adir.mkdir(exist_ok=True)
    rep = an.convergence_report(results, _reference(sc), A=max(sc.A_levels))
    (adir / "report.json").write_text(rep.to_json() + "\n")
    (adir / "report.csv").write_text(rep.to_csv())
    rows = []
    for r in results:
        row = {"rung": r.rung, "eps": r.eps, "convex": True, "margin_ok": True, "HA_monotone": True}
        HA = []
        for A in sc.A_levels:
            if not sc.analysis.get("profiles", True):
                break
            prof = mabuchi_profile(model, r, A)
            (adir / f"profile_r{r.rung:02d}_A{A:g}.csv").write_text(prof.to_csv())
            ie = an.integral_estimate_com016(r, A, prof)
            row["convex"] &= prof.convex
            row["margin_ok"] &= ie.ok
            row.setdefault("C_A", {})[f"{A:g}"] = prof.C_A
            row.setdefault("margin", {})[f"{A:g}"] = ie.margin
            HA.append(prof.H_A)
        if len(HA) > 1:
            row["HA_monotone"] = bool(np.all(np.diff(np.array(HA), axis=0) <= 1e-12))
        if sc.analysis.get("identity", True):
            row["identity_sup"] = an.identity_sup(model, an.dbar_norms(r), sc.analysis["identity_margin"])
        rows.append(row)
    i_mid = results[0].grid.N_t // 2
    summary = {
        "scenario": sc.name,
        "scenario_hash": sc.digest(),
        "reference": rep.reference_note,
        "rungs": rows,
        "kappa1": rep.kappa1,
        "fits": {k: v.to_dict() for k, v in rep.fits.items()},
        "l2_mid": [float(v[i_mid]) for v in rep.l2],
        "slope_gap": rep.slope_gap,
        "sup_K": rep.sup_K,
        "boundary_entropy": rep.boundary_entropy,
    }
    _dump(adir / "summary.json", summary)
    (adir / "summary.txt").write_text(summary_table(summary))
    return summary


def summary_table(s: dict) -> str:
    lines = [f"scenario {s['scenario']}  ({s['reference']})",
             f"{'rung':>4} {'eps':>10} {'L2(t=1/2)':>11} {'sup|dK|':>10} {'slope gap':>11} {'convex':>6} {'margin':>6}"]
    for k, row in enumerate(s["rungs"]):
        lines.append(f"{row['rung']:>4} {row['eps']:>10.3e} {s['l2_mid'][k]:>11.4e} {s['sup_K'][k]:>10.3e} "
                     f"{s['slope_gap'][k]:>11.3e} {str(row['convex']):>6} {str(row['margin_ok']):>6}")
    for name, f in s["fits"].items():
        if f["rate"] is None:
            lines.append(f"fit {name}: {f['note']}")
        else:
            lines.append(f"fit {name}: rate {f['rate']:.3f}  R^2 {f['r2']:.3f}")
    lines.append(f"kappa1 {s['kappa1']:.4g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- report

def report(sc: Scenario, out: Path) -> str:
    spath = out / "analysis" / "summary.json"
    rpath = out / "analysis" / "report.json"
    if not spath.exists() or not rpath.exists():
        raise StateError(f"no analysis at {out / 'analysis'}; run analyze first")
    s = json.loads(spath.read_text())
    if s.get("scenario_hash") != sc.digest():
        raise StateError(f"{out}: analysis belongs to scenario hash {s.get('scenario_hash')}")
    rep = json.loads(rpath.read_text())
    pdir = out / "plots"
    pdir.mkdir(exist_ok=True)
    lines = ["eps,l2_mid,sup_K,slope_gap,min_f,dbar_mid"]
    i_mid = len(rep["t"]) // 2
    for k, e in enumerate(rep["eps"]):
        lines.append(",".join(repr(float(v)) for v in (e, rep["l2"][k][i_mid], rep["sup_K"][k], rep["slope_gap"][k],
                                                      min(rep["min_f"][k]), rep["dbar"][k][i_mid])))
    (pdir / "convergence.csv").write_text("\n".join(lines) + "\n")
    lines = ["eps,t,l2,d2K,w12,dbar"]
    for k, e in enumerate(rep["eps"]):
        for i, t in enumerate(rep["t"]):
            d2 = rep["d2K"][k][i - 1] if 0 < i < len(rep["t"]) - 1 else float("nan")
            lines.append(",".join(repr(float(v)) for v in (e, t, rep["l2"][k][i], d2, rep["w12"][k][i],
                                                          rep["dbar"][k][i])))
    (pdir / "slices.csv").write_text("\n".join(lines) + "\n")
    return summary_table(s)


# ---------------------------------------------------------------- verify suites

@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict

    def to_dict(self):
        return {"suite": self.name, "passed": self.passed, **self.details}


def suite_maxfun(seed: int, **_) -> SuiteResult:
    r = maxfun.run_case_suite(seed=seed)
    d = r.to_dict()
    d.pop("suite")
    return SuiteResult("maxfun-cases", r.passed, d)


def _gap_suite(name, families, want) -> SuiteResult:
    rows = []
    for fam in families:
        v = gapprop.verify_prop_nd001(fam)
        rows.append({"family": fam.spec.get("family"), "m": fam.m, "N": fam.N, "verdict": v.verdict,
                     "max_energy": max(v.energies), "C": fam.C})
    ok = all(r["verdict"] == want for r in rows) and not any(r["verdict"] == gapprop.VIOLATED for r in rows)
    return SuiteResult(name, ok, {"families": rows, "expected": want})


def suite_gap_positive(**_) -> SuiteResult:
    return _gap_suite("gap-prop-positive", gapprop.positive_families(), gapprop.CONSISTENT)


def suite_gap_negative(**_) -> SuiteResult:
    return _gap_suite("gap-prop-negative", gapprop.negative_families(), gapprop.HYPOTHESIS)


IDENTITY_LADDER = (0.1, 0.05, 0.025, 0.0125, 0.01)


def rotation_run(N_t: int, N_x: int, L: float = 8.0, t0: float = 1.0, ladder=IDENTITY_LADDER):
    model = build_sphere_model(N_x, L)
    return continuation(PathGrid(model, N_t), zero(), rotation(t0), SolverConfig(eps_ladder=ladder))


def suite_identity(stored=None, margin: float = 3.0, **_) -> SuiteResult:
    """Identity residual at eps = 1e-2 on a grid and on its 2x refinement.

    ``stored`` may supply the coarse eps = 1e-2 rung of an existing rotation run.
    """
    if stored is None:
        coarse = rotation_run(64, 128)[-1]
    else:
        coarse = stored
    g = coarse.grid
    fine = rotation_run(2 * g.N_t, 2 * (g.model.n - 1), g.model.L)[-1]
    a, b, ratio = an.identity_refinement(coarse, fine, margin)
    ok = 2.5 <= ratio <= 6.0
    return SuiteResult("identity-com015", ok, {
        "eps": coarse.eps, "coarse_grid": [g.N_t + 1, g.model.n], "fine_grid": [fine.grid.N_t + 1, fine.model.n],
        "coarse_sup": a, "fine_sup": b, "ratio": ratio, "window": [2.5, 6.0], "region_margin": margin,
        "source": "stored" if stored is not None else "solved"})


def suite_quadratic(**_) -> SuiteResult:
    from .scenarios import builtin
    sc = builtin("torus-zero")
    _, grid, ep0, ep1 = sc.build()
    res = continuation(grid, ep0, ep1, sc.solver_config())
    t = grid.t[:, None]
    errs = [float(np.abs(r.values + r.eps / 2 * t * (1 - t)).max()) for r in res]
    its = [r.iterations for r in res]
    ok = max(errs) <= 1e-10 and max(its) <= 3
    return SuiteResult("geodesic-quadratic", ok, {"sup_errors": errs, "iterations": its})


SUITES = {
    "maxfun-cases": suite_maxfun,
    "gap-prop-positive": suite_gap_positive,
    "gap-prop-negative": suite_gap_negative,
    "identity-com015": suite_identity,
    "geodesic-quadratic": suite_quadratic,
}
