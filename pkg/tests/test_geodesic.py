import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mabuchi_lab.calculus import PathGrid
from mabuchi_lab.geodesic import (GuessError, SolverConfig, SolverError, continuation, cone_report,
                                  geometric_ladder, initial_guess, newton_solve, residual)
from mabuchi_lab.geometry import build_sphere_model, build_torus_model
from mabuchi_lab.potentials import constant, cosine, rotation, zero

import oracles


def torus_grid(N_t=16, N_x=32, psi=None):
    return PathGrid(build_torus_model(N_x, psi), N_t)


def test_ladder_default():
    lad = geometric_ladder()
    assert len(lad) == 11
    assert lad[0] == 0.1 and lad[-1] == pytest.approx(0.1 * 0.5 ** 10)
    assert all(b < a for a, b in zip(lad, lad[1:]))
    with pytest.raises(ValueError):
        geometric_ladder(ratio=1.5)


def test_config_invariants():
    with pytest.raises(ValueError):
        SolverConfig(newton_tol=0)
    with pytest.raises(ValueError):
        SolverConfig(eps_ladder=(0.1, 0.2))
    with pytest.raises(ValueError):
        SolverConfig(backtrack=1.0)
    assert SolverConfig().echo()["eps_ladder"][0] == 0.1


def test_residual_of_quadratic_is_zero():
    g = torus_grid()
    t = g.t[:, None]
    eps = 0.05
    P = -(eps / 2) * t * (1 - t) * np.ones(g.model.n)
    assert np.abs(residual(g, P, eps)).max() < 1e-14


def test_residual_of_linear_interpolation():
    g = PathGrid(build_sphere_model(64, 8.0), 16)
    P = np.broadcast_to(rotation(0.3)(g.model.x), g.shape).copy()
    R = residual(g, P, 0.1)
    assert np.allclose(R[1:-1, 1:-1], -0.1 * g.model.w[1:-1], atol=1e-15)
    assert np.all(R[0] == 0) and np.all(R[-1] == 0)


def test_exact_rotation_residual_second_order():
    errs = []
    for n in (64, 128, 256):
        g = PathGrid(build_sphere_model(n, 8.0), n // 2)
        P = oracles.rotation_geodesic(g.t[:, None], g.model.x[None, :])
        errs.append(np.abs(residual(g, P, 0.0)).max())
    assert 3.0 < errs[0] / errs[1] < 5.0 and 3.0 < errs[1] / errs[2] < 5.0


def test_initial_guess_examples():
    g = torus_grid()
    z = np.zeros(g.model.n)
    P, c = initial_guess(g, z, z, 0.1)
    assert c == -0.05
    _, c2 = initial_guess(g, z, z + 1.0, 0.1)
    assert c2 == c


def test_initial_guess_generic_admissible():
    g = torus_grid(16, 32, cosine(0.004))
    x = g.model.x
    P, c = initial_guess(g, cosine(0.001)(x), cosine(0.002, 2)(x), 0.05)
    assert c < 0
    R = residual(g, P, 0.0)[1:-1]
    assert R.min() >= 0.05 * g.model.w.max() * (1 - 1e-12)


def test_initial_guess_rejects_inadmissible_endpoint():
    g = torus_grid()
    with pytest.raises(GuessError):
        initial_guess(g, np.zeros(32), cosine(0.03)(g.model.x), 0.1)


def test_newton_exact_quadratic():
    g = torus_grid(64, 64)
    z = np.zeros(64)
    init, _ = initial_guess(g, z, z, 0.05)
    init = init + 1e-3 * np.sin(np.pi * g.t)[:, None]
    r = newton_solve(g, z, z, 0.05, SolverConfig(), init)
    t = g.t[:, None]
    assert np.abs(r.values + 0.025 * t * (1 - t)).max() <= 1e-12
    assert r.iterations <= 2


def test_continuation_quadratics(torus_zero):
    t = torus_zero[0].grid.t[:, None]
    prev = None
    for r in torus_zero:
        assert np.abs(r.values + r.eps / 2 * t * (1 - t)).max() <= 1e-10
        assert r.iterations <= 3
        if prev is not None:
            # smaller eps, larger values at interior nodes
            assert np.all(r.values[1:-1] > prev[1:-1])
        prev = r.values
    assert torus_zero[1].iterations <= 1


def test_constant_shift_bracket(torus_shift):
    g = torus_shift[0].grid
    t = g.t[:, None]
    lin = 0.7 * t * np.ones(g.model.n)
    for r in torus_shift:
        m = g.model.w + g.model.dxx(r.values)
        lower = lin - r.eps / 2 * t * (1 - t) * (g.model.w / m).max()
        assert np.all(r.values <= lin + 1e-12)
        assert np.all(r.values >= lower - 1e-12)


def test_solve_result_invariants(torus_cosine, rotation_ladder):
    for ladder in (torus_cosine, rotation_ladder):
        for r in ladder:
            ep0 = ladder.scenario.build()[2](r.model.x)
            ep1 = ladder.scenario.build()[3](r.model.x)
            assert np.array_equal(r.values[0], ep0) and np.array_equal(r.values[-1], ep1)
            assert np.abs(residual(r.grid, r.values, r.eps)).max() <= 1e-10
            rep = cone_report(r.grid, r.values)
            assert rep["min_m"] > 0 and rep["min_rho"] > 0
            assert rep == r.cone_report


def test_rotation_tracks_exact_geodesic(rotation_ladder):
    g = rotation_ladder[0].grid
    exact = oracles.rotation_geodesic(g.t[:, None], g.model.x[None, :])
    errs = [np.abs(r.values - exact).max() for r in rotation_ladder]
    assert errs[-1] < errs[0] / 20
    # eps part dominates early, the grid floor O(h^2) late
    assert all(b < a for a, b in zip(errs[:6], errs[1:7]))


def test_proxies_bounded(rotation_ladder):
    # exact path: Phi_tt = 4 w(s + 2t) <= 1, Phi_tx = 2 w(s + 2t), |Phi_xx| <= 1/4
    for r in rotation_ladder:
        p = r.proxies
        assert p["max_Phi_tt"] < 5 and p["max_Phi_tx"] < 5 and p["max_Phi_xx"] < 5
    late = [r.proxies["max_Phi_tt"] for r in rotation_ladder[4:]]
    assert max(late) / min(late) < 1.2


def test_rung_tagged_failure_on_inadmissible_endpoint():
    g = torus_grid(16, 32)
    with pytest.raises(SolverError) as exc:
        continuation(g, zero(), cosine(0.01, 2), SolverConfig(eps_ladder=(0.1, 0.05)))
    assert exc.value.rung == 0
    assert exc.value.cone["endpoint"] == 1 and exc.value.cone["min_m"] < 0
    assert str(exc.value).startswith("rung 0:")


def test_reflection_symmetry():
    # cos is even: x -> -x maps node j to -j mod N
    g = torus_grid(16, 32, cosine(0.004))
    res = continuation(g, cosine(0.001), cosine(0.002, 2), SolverConfig(eps_ladder=(0.1, 0.05)))
    idx = (-np.arange(32)) % 32
    for r in res:
        assert np.abs(r.values - r.values[:, idx]).max() < 1e-10


def test_time_reversal():
    g = torus_grid(16, 32, cosine(0.004))
    cfg = SolverConfig(eps_ladder=(0.1, 0.05))
    a = continuation(g, cosine(0.001), cosine(0.002, 2), cfg)[-1]
    b = continuation(g, cosine(0.002, 2), cosine(0.001), cfg)[-1]
    assert np.abs(a.values - b.values[::-1]).max() < 1e-9


def test_sidecar_contents(torus_zero):
    s = torus_zero[-1].sidecar(SolverConfig())
    assert s["recomputed_residual"] <= 1e-10
    assert s["model_hash"] == torus_zero[-1].model.model_hash()
    assert set(s["cone_report"]) == {"min_m", "min_rho"}
    assert s["config"]["newton_tol"] == 1e-10


@settings(max_examples=8, deadline=None)
@given(st.floats(0.0, 2.0), st.sampled_from([0.2, 0.1, 0.05]))
def test_shift_only_moves_linear_part(c, eps):
    g = torus_grid(8, 16)
    z = np.zeros(16)
    cfg = SolverConfig(eps_ladder=(eps,))
    a = continuation(g, zero(), zero(), cfg)[0].values
    b = continuation(g, zero(), constant(c), cfg)[0].values
    t = g.t[:, None]
    assert np.abs(b - a - c * t * np.ones_like(z)).max() < 1e-10
