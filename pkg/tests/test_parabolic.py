import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnplab.dtn import dtn_pair
from dnplab.elliptic import EllipticProblem, solve
from dnplab.parabolic import (
    ParabolicProblem,
    TimeGrid,
    alpha,
    comparison_defect,
    export_snapshots,
    implicit_euler_residual,
    lateral_cauchy_record,
    potential_from_epsilon,
    separated_lateral,
    separated_solution,
    step_implicit,
)


def test_alpha_values():
    assert alpha(4, 3) == 0.5
    assert alpha(2, 1.5) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        alpha(2, 3)
    with pytest.raises(ValueError):
        alpha(1.0, 2.0)


def test_potential_from_epsilon():
    assert np.allclose(potential_from_epsilon(np.ones(3), 4, 3), 2.0)
    assert np.allclose(potential_from_epsilon(np.ones(3), 2, 1.5), 4 / 3)


@given(p=st.floats(1.05, 5.0), gap=st.floats(0.01, 10.0))
def test_exponent_identity(p, gap):
    m = p - 1 + gap
    a = alpha(m, p)
    assert a * m - 1 == pytest.approx(a * (p - 1), rel=1e-12, abs=1e-12)


def _problem(mesh, p, m, g=None):
    x1, x2 = mesh.nodes.T
    if g is None:
        g = mesh.trace(1 + x1 + 0.5 * x2)
    return ParabolicProblem(mesh, 1 + 0.5 * x1, 1 + 0.3 * x1 * x2, p, m, separated_lateral(g, m, p)), g


def test_problem_validation(mesh8):
    lat = lambda t: 0.0
    with pytest.raises(ValueError):
        ParabolicProblem(mesh8, 0.0, 1.0, 3.0, 4.0, lat)
    with pytest.raises(ValueError):
        ParabolicProblem(mesh8, 1.0, 5.0, 3.0, 4.0, lat, mu=2.0)
    with pytest.raises(ValueError):
        TimeGrid(0)


def test_separated_solution_basics(mesh8):
    prob, g = _problem(mesh8, 3.0, 4.0)
    sep = separated_solution(prob, g)
    assert np.all(sep.at(0.0) == 0.0)
    assert np.allclose(sep.at(0.25), 0.5 * sep.w)
    with pytest.raises(ValueError):
        separated_solution(prob, np.zeros_like(g))


def test_constant_data_positive(mesh8):
    g = np.full(len(mesh8.boundary_nodes), 0.8)
    prob, _ = _problem(mesh8, 1.5, 1.0, g)
    sep = separated_solution(prob, g)
    inner = mesh8.interior_nodes
    assert np.all(sep.w[inner] >= 1e-10) and np.all(sep.w <= 0.8 + 1e-8)
    assert np.all(sep.at(0.3)[inner] > 0)


def test_flux_factorization(mesh8):
    prob, g = _problem(mesh8, 1.5, 2.0)
    sep = separated_solution(prob, g)
    f1 = sep.flux_at(1.0)
    for t in (0.01, 0.3, 2.0):
        assert np.allclose(sep.flux_at(t), sep.time_factor(t) * f1, rtol=1e-12, atol=0)


def test_zero_lateral_data(mesh8):
    prob = ParabolicProblem(mesh8, 1.0, 1.0, 3.0, 4.0, lambda t: 0.0)
    snaps = step_implicit(prob, TimeGrid(4))
    assert all(np.all(u == 0.0) for u in snaps)


def test_dissipation_with_zero_data(mesh8, rng):
    x1, x2 = mesh8.nodes.T
    for p, m in [(3.0, 4.0), (1.5, 1.0), (1.5, 0.75)]:
        prob = ParabolicProblem(mesh8, 1 + x1, 1.0, p, m, lambda t: 0.0)
        u0 = np.sin(np.pi * x1) * np.sin(np.pi * x2) + rng.uniform(0, 0.3, mesh8.n_nodes)
        u0[mesh8.boundary_nodes] = 0.0
        snaps = step_implicit(prob, TimeGrid(10), initial=u0)
        mass = np.array([mesh8.lumped_mass @ (prob.epsilon * np.maximum(u, 0) ** (m + 1)) for u in snaps])
        assert np.all(np.diff(mass) <= 1e-10 * mass[0])


def test_ordered_data_ordered_snapshots(mesh8):
    prob2, g2 = _problem(mesh8, 3.0, 4.0)
    prob1, g1 = _problem(mesh8, 3.0, 4.0, 0.5 * g2)
    grid = TimeGrid(8)
    r1, r2 = step_implicit(prob1, grid), step_implicit(prob2, grid)
    for a, b in zip(r1, r2):
        assert np.all(a <= b + 1e-8)
    d = comparison_defect(r1, r2, prob1.epsilon, 4.0, mesh8)
    assert np.all(np.diff(d) <= 1e-8 * max(1.0, d.max()))
    assert np.all(comparison_defect(r1, r1, prob1.epsilon, 4.0, mesh8) == 0.0)


def test_comparison_defect_mismatch(mesh8):
    with pytest.raises(ValueError):
        comparison_defect([np.zeros(mesh8.n_nodes)], [], 1.0, 2.0, mesh8)
    with pytest.raises(ValueError):
        comparison_defect([np.zeros(3)], [np.zeros(3)], 1.0, 2.0, mesh8)


def test_separated_residual_first_order(mesh8):
    prob, g = _problem(mesh8, 3.0, 4.0)
    sep = separated_solution(prob, g)
    res = []
    for n in (8, 16, 32):
        grid = TimeGrid(n)
        snaps = [sep.at(t) for t in grid.times]
        res.append(np.max(implicit_euler_residual(prob, grid, snaps)))
    assert 1.6 <= res[0] / res[1] <= 2.4 and 1.6 <= res[1] / res[2] <= 2.4


def test_lateral_record(mesh8):
    prob, g = _problem(mesh8, 3.0, 4.0)
    x1 = mesh8.nodes[:, 0]
    rec = lateral_cauchy_record(prob, g, [mesh8.trace(x1)], [0.0, 0.2, 0.5, 1.0])
    assert rec.pairings[0, 0] == 0.0
    ratio = rec.pairings[1, 0] / rec.pairings[2, 0]
    assert ratio == pytest.approx((0.2 / 0.5) ** rec.exponent, rel=1e-10)
    V = potential_from_epsilon(prob.epsilon, 4.0, 3.0)
    ell = EllipticProblem(mesh8, prob.gamma, V, 3.0, 4.0, g)
    assert rec.pairings[-1, 0] == pytest.approx(dtn_pair(ell, solve(ell), mesh8.trace(x1)), rel=1e-9)


def test_snapshot_export(tmp_path, mesh8):
    prob, g = _problem(mesh8, 3.0, 4.0)
    grid = TimeGrid(3)
    snaps = step_implicit(prob, grid)
    export_snapshots(tmp_path, prob, grid, snaps)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["times"] == [0.0, 1 / 3, 2 / 3, 1.0]
    assert len(manifest["files"]) == 4
    rows = (tmp_path / manifest["files"][-1]).read_text().splitlines()
    assert rows[0] == "node,value" and len(rows) == mesh8.n_nodes + 1
    assert float(rows[1].split(",")[1]) == snaps[-1][0]
