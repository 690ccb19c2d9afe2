import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from mabuchi_lab import cli
from mabuchi_lab.scenarios import ScenarioError, builtin, load, validate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = {"name": "t", "model": {"kind": "torus", "N_x": 32}, "N_t": 16,
        "endpoints": {"phi0": {"preset": "zero"}, "phi1": {"preset": "constant", "c": 0.2}},
        "solver": {"ladder": [0.1, 0.05]}}


def _with(path, value):
    d = json.loads(json.dumps(BASE))
    *head, last = path.split(".")
    node = d
    for k in head:
        node = node[k]
    node[last] = value
    return d


@pytest.mark.parametrize("path,value,field", [
    ("N_t", 2, "N_t"),
    ("N_t", "many", "N_t"),
    ("model.kind", "plane", "model.kind"),
    ("model.N_x", 8, "model.N_x"),
    ("endpoints.phi1", {"preset": "rotation", "t0": 1.0}, "endpoints.phi1"),
    ("endpoints.phi0", {"preset": "spline"}, "endpoints.phi0"),
    ("A_levels", [], "A_levels"),
    ("solver", {"tolerance": 1e-8}, "solver.tolerance"),
    ("analysis", {"reference": "guess"}, "analysis.reference"),
])
def test_validation_names_field(path, value, field):
    with pytest.raises(ScenarioError) as exc:
        validate(_with(path, value))
    assert exc.value.field == field
    assert str(exc.value).startswith(field)


def test_unknown_top_key_and_defaults():
    with pytest.raises(ScenarioError) as exc:
        validate({**BASE, "colour": "red"})
    assert exc.value.field == "colour"
    sc = validate(BASE)
    assert sc.A_levels == (2.0, 4.0, 8.0, 16.0) and sc.seed == 0
    assert sc.analysis["identity_margin"] == 3.0


def test_digest_ignores_out_only():
    a = validate(BASE)
    b = validate({**BASE, "out": "elsewhere"})
    c = validate({**BASE, "N_t": 32})
    assert a.digest() == b.digest() != c.digest()


def test_load_shipped_configs():
    assert [s.name for s in load(CONFIGS / "suite.yaml")] == ["torus-shift", "torus-cosine", "sphere-rotation"]
    (rot,) = load(CONFIGS / "sphere-rotation.yaml")
    assert len(rot.solver_config().eps_ladder) == 11
    (z,) = load(CONFIGS / "torus-zero.yaml")
    assert z.digest() == builtin("torus-zero").digest()


def test_load_rejects_duplicates_and_bad_yaml(tmp_path):
    p = tmp_path / "dup.yaml"
    p.write_text(yaml.safe_dump({"scenarios": [BASE, BASE]}))
    with pytest.raises(ScenarioError, match="unique"):
        load(p)
    p.write_text("name: [unclosed")
    with pytest.raises(ScenarioError, match="YAML"):
        load(p)


def test_sampled_endpoint(tmp_path):
    x = np.arange(32) / 32
    np.savetxt(tmp_path / "phi1.csv", 0.001 * np.cos(2 * np.pi * x), delimiter=",")
    raw = _with("endpoints.phi1", {"samples": "phi1.csv"})
    sc = validate(raw, tmp_path)
    model, _, _, ep1 = sc.build()
    assert np.allclose(ep1(model.x), 0.001 * np.cos(2 * np.pi * x), atol=1e-15)
    with pytest.raises(ScenarioError, match="not found"):
        validate(_with("endpoints.phi1", {"samples": "nope.csv"}), tmp_path)


def test_exact_limit():
    f = validate(BASE).exact_limit()
    assert f(0.5, np.zeros(3)).tolist() == [0.1] * 3
    g = builtin("sphere-rotation").exact_limit()
    assert g(0.0, np.array([0.3])) == 0.0
    assert g(1.0, np.array([0.0])) == pytest.approx(np.log1p(np.exp(2.0)) - np.log(2.0))
    assert builtin("torus-cosine").exact_limit() is None


# ---------------------------------------------------------------- cli

def _write(tmp_path, raw, name="sc.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["verify", "no-such-suite", "--out", str(tmp_path)]) == 2
    assert "unknown suite" in capsys.readouterr().err
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["solve", "--config", str(_write(tmp_path, _with("N_t", 2)))]) == 2
    assert "N_t" in capsys.readouterr().err
    assert cli.main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_cli_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_THREADS, "lots")
    assert cli.main(["solve", "--config", str(_write(tmp_path, BASE)), "--out", str(tmp_path)]) == 2
    assert cli.main(["solve", "--config", str(_write(tmp_path, BASE)), "--threads", "0"]) == 2


def test_cli_state_errors(tmp_path):
    cfg = _write(tmp_path, BASE)
    out = tmp_path / "out"
    assert cli.main(["analyze", "--config", str(cfg), "--out", str(out)]) == 3
    assert cli.main(["report", "--config", str(cfg), "--out", str(out)]) == 3
    assert cli.main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    # report before analyze
    assert cli.main(["report", "--config", str(cfg), "--out", str(out)]) == 3
    # config changed since the solve
    cfg2 = _write(tmp_path, _with("endpoints.phi1.c", 0.3), "sc2.yaml")
    assert cli.main(["analyze", "--config", str(cfg2), "--out", str(out)]) == 3
    (out / "t" / "rung_01.bin").unlink()
    assert cli.main(["analyze", "--config", str(cfg), "--out", str(out)]) == 3


def test_cli_full_pipeline_torus_zero(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path))
    cfg = CONFIGS / "torus-zero.yaml"
    assert cli.main(["solve", "--config", str(cfg)]) == 0
    d = tmp_path / "torus-zero"
    man = json.loads((d / "manifest.json").read_text())
    assert [r["rung"] for r in man["rungs"]] == [0, 1, 2]
    last = json.loads((d / "rung_02.json").read_text())
    assert last["recomputed_residual"] <= 1e-10
    assert cli.main(["analyze", "--config", str(cfg)]) == 0
    s = json.loads((d / "analysis" / "summary.json").read_text())
    assert all(row["convex"] and row["margin_ok"] and row["HA_monotone"] for row in s["rungs"])
    assert cli.main(["report", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "scenario torus-zero" in out
    head = (d / "plots" / "convergence.csv").read_text().split("\n", 1)[0]
    assert head == "eps,l2_mid,sup_K,slope_gap,min_f,dbar_mid"


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_deterministic(tmp_path):
    cfg = _write(tmp_path, {"scenarios": [BASE, {**BASE, "name": "u", "N_t": 8}]})
    trees = []
    for k, threads in enumerate(("1", "2")):
        out = tmp_path / f"run{k}"
        for cmd in ("solve", "analyze", "report"):
            assert cli.main([cmd, "--config", str(cfg), "--out", str(out), "--threads", threads]) == 0
        trees.append(_tree(out))
    assert trees[0].keys() == trees[1].keys() and len(trees[0]) > 10
    for name in trees[0]:
        assert trees[0][name] == trees[1][name], name


def test_cli_solver_failure_exit_1(tmp_path, capsys):
    raw = _with("endpoints.phi1", {"preset": "cosine", "amplitude": 0.05})
    assert cli.main(["solve", "--config", str(_write(tmp_path, raw)), "--out", str(tmp_path)]) == 1
    assert "rung 0:" in capsys.readouterr().err


def test_cli_verify_maxfun(tmp_path, capsys):
    assert cli.main(["verify", "maxfun-cases", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "maxfun-cases: pass"
    d = json.loads((tmp_path / "verify" / "maxfun-cases.json").read_text())
    assert d["passed"] and d["seed"] == 20240611


def test_cli_verify_gap_suites(tmp_path):
    assert cli.main(["verify", "gap-prop-positive", "--out", str(tmp_path)]) == 0
    assert cli.main(["verify", "gap-prop-negative", "--out", str(tmp_path)]) == 0
    assert cli.main(["verify", "geodesic-quadratic", "--out", str(tmp_path)]) == 0


def test_cli_verify_identity_needs_stored_rung(tmp_path):
    # sphere scenario with no stored run
    assert cli.main(["verify", "identity-com015", "--config", str(CONFIGS / "identity-rotation.yaml"),
                     "--out", str(tmp_path)]) == 3
    assert cli.main(["verify", "identity-com015", "--config", str(CONFIGS / "torus-zero.yaml"),
                     "--out", str(tmp_path)]) == 2
