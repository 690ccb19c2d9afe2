import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mabuchi_lab.analysis import (boundary_entropy, convergence_report, dbar_fields, dbar_integral,
                                  dbar_norms, fit_rate, gap_scan, identity_sup,
                                  integral_estimate_com016, partial_w12, partial_w12_from, truncation_set,
                                  vector_field)
from mabuchi_lab.calculus import PathGrid
from mabuchi_lab.geometry import build_sphere_model, build_torus_model


def test_vector_field_zero_on_flat_quadratic(torus_zero):
    v = vector_field(torus_zero[-1])
    assert np.abs(v[1:-1]).max() < 1e-12


def test_vector_field_tends_to_rotation(rotation_ladder):
    # exact path: v = d_t - 2 d_s
    s = rotation_ladder[0].model.x
    sel = np.abs(s) <= 4
    errs = [np.nanmax(np.abs(vector_field(r)[1:-1][:, sel] + 2)) for r in rotation_ladder]
    assert errs[-1] < 0.02
    assert errs[-1] < errs[0] / 100


def test_vector_field_odd_under_reflection(torus_cosine):
    # the cosine scenario is even in x, so v^x is odd
    v = vector_field(torus_cosine[-1])[1:-1]
    idx = (-np.arange(v.shape[1])) % v.shape[1]
    assert np.abs(v + v[:, idx]).max() < 1e-9


def test_dbar_trivial(torus_zero):
    d = dbar_norms(torus_zero[-1])
    for f in (d.dbar_X, d.grad_term, d.dbar_G):
        assert np.nanmax(np.abs(f)) < 1e-20
    # solve roundoff in m, amplified by second differences (h^-2 ~ 4e3)
    assert d.identity_sup < 1e-8


def _manufactured(n, sphere):
    if sphere:
        m = build_sphere_model(n, 8.0)
    else:
        m = build_torus_model(n, lambda x: 0.003 * np.cos(2 * np.pi * x))
    g = PathGrid(m, n)
    T, X = g.t[:, None], m.x[None, :]
    if sphere:
        P = 0.2 * T ** 2 + 0.1 * T * m.w + 0.05 * np.sin(T) * m.w ** 2
    else:
        P = (0.2 * T ** 2 + 0.01 * T * np.sin(2 * np.pi * X) + 0.002 * np.cos(2 * np.pi * X) * (1 - T)
             + 0.001 * np.sin(3 * T) * np.cos(4 * np.pi * X))
    return m, dbar_fields(m, g.ht, P)


@pytest.mark.parametrize("sphere", [False, True])
def test_identity_second_order_on_manufactured_field(sphere):
    sups = [identity_sup(*_manufactured(n, sphere)) for n in (32, 64, 128)]
    for a, b in zip(sups, sups[1:]):
        assert 2.5 <= a / b <= 6


def test_dbar_decays_along_ladder(rotation_ladder):
    mid = rotation_ladder[0].grid.N_t // 2
    vals = [dbar_integral(r)[mid] for r in rotation_ladder]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_truncation_set_examples(torus_zero, rotation_ladder):
    r = torus_zero[-1]
    assert truncation_set(r, 1e3, 5).all()
    assert not truncation_set(r, -100.0, 5).any()
    assert truncation_set(r, 0.5, 5).all()
    assert truncation_set(rotation_ladder[-1], 50.0, 10).all()


def test_partial_w12_examples(torus_zero):
    assert partial_w12(torus_zero[-1], 8.0, 5) < 1e-20
    errs = []
    for n in (64, 128):
        t = build_torus_model(n)
        f = 1 + 0.1 * np.sin(2 * np.pi * t.x)
        errs.append(abs(partial_w12_from(t, f) - 0.01 * (2 * np.pi) ** 2 / 2))
    assert partial_w12_from(build_torus_model(256), 1 + 0.1 * np.sin(2 * np.pi * np.arange(256) / 256)) \
        == pytest.approx(0.19739, abs=1e-4)
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_partial_w12_bounded_on_rotation_ladder(rotation_ladder):
    mid = rotation_ladder[0].grid.N_t // 2
    vals = [partial_w12(r, 8.0, mid) for r in rotation_ladder]
    assert max(vals) < 5.0
    assert vals[-1] == pytest.approx(vals[-2], rel=0.05)


def test_partial_w12_monotone_in_A(rotation_ladder):
    r = rotation_ladder[3]
    for i in (1, 16, 32, 48, 63):
        vals = [partial_w12(r, A, i) for A in (-20.0, -5.0, 0.0, 2.0, 8.0, 16.0)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_gap_scan_examples():
    assert gap_scan(np.ones(10)) == (1.0, "gap")
    assert gap_scan(np.array([0.0, 0.6, 1.0, 0.0])) == (0.6, "gap")
    k, verdict = gap_scan(np.linspace(0, 1, 1001))
    assert k == pytest.approx(1e-3) and verdict == "no-gap"
    with pytest.raises(ValueError):
        gap_scan(np.array([-1.0, 1.0]))


def test_integral_estimate_trivial(torus_zero):
    ie = integral_estimate_com016(torus_zero[-1], 8.0)
    assert abs(ie.lhs) < 1e-12 and abs(ie.rhs) < 1e-20 and ie.ok


def test_integral_estimate_constant_shift(torus_shift):
    for r in torus_shift:
        assert integral_estimate_com016(r, 8.0).ok


def test_fit_rate_on_exact_power_law():
    eps = 0.1 * 0.5 ** np.arange(6)
    f = fit_rate(eps, 3 * eps ** 1.5)
    assert f.rate == pytest.approx(1.5, abs=1e-12) and f.prefactor == pytest.approx(3.0, rel=1e-10)
    assert f.r2 == pytest.approx(1.0)
    z = fit_rate(eps, np.zeros(6))
    assert z.rate is None and z.note == "identically zero"


def test_report_torus_zero_all_zero(torus_zero):
    # f = 1 on every slice up to roundoff of the solve
    rep = convergence_report(list(torus_zero))
    for k in range(len(torus_zero)):
        for name in ("l2", "w12", "dbar"):
            assert np.abs(getattr(rep, name)[k]).max() < 1e-13
        assert rep.slope_gap[k] == 0.0
    assert rep.kappa1 == pytest.approx(1.0, abs=1e-12)
    assert rep.fits["slope_gap"].note == "identically zero"


def test_report_rotation(rotation_report, rotation_ladder):
    rep = rotation_report
    mid = len(rep.t) // 2
    l2 = [v[mid] for v in rep.l2]
    assert all(b < a for a, b in zip(l2, l2[1:]))
    assert rep.fits["l2_mid"].rate > 0
    assert rep.reference_note == "exact oracle"
    assert all(np.all(np.isfinite(np.asarray(v, float))) for v in (rep.sup_K, rep.slope_gap, rep.kappa0))
    d = json.loads(rep.to_json())
    assert len(d["eps"]) == len(rotation_ladder)
    head = rep.to_csv().split("\n", 1)[0]
    assert head == "rung,slice,metric,value"


def test_report_rejects_mixed_grids(torus_zero, torus_shift):
    small = PathGrid(build_torus_model(32), 16)
    from mabuchi_lab.geodesic import SolverConfig, continuation
    from mabuchi_lab.potentials import zero
    other = continuation(small, zero(), zero(), SolverConfig(eps_ladder=(0.1,)))
    with pytest.raises(ValueError):
        convergence_report([torus_zero[0], other[0]])
    with pytest.raises(ValueError):
        convergence_report([])


def test_boundary_entropy_skips_off_grid_times(rotation_ladder):
    b = boundary_entropy(rotation_ladder[-1], ts=(1 / 16, 1 / 128))
    assert b["t"] == [1 / 16]


# ---------------------------------------------------------------- properties

@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=4, max_size=40), st.floats(0.01, 0.5))
def test_gap_scan_property(vals, floor):
    f = np.asarray(vals)
    k, verdict = gap_scan(f, floor)
    pos = f[f > 1e-10]
    assert not np.any((f > 1e-10) & (f < k))
    if pos.size:
        assert k == pos.min()
    assert verdict == ("gap" if k >= floor else "no-gap")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.01, 10))
def test_fit_rate_recovers_power(p, c):
    eps = np.geomspace(0.1, 1e-4, 9)
    assert fit_rate(eps, c * eps ** p).rate == pytest.approx(p, rel=1e-9)
