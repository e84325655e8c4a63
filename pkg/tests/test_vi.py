import numpy as np
import pytest
import scipy.sparse.linalg as spla

from vicontrol.assembly import coercivity_constant, h1_norm, l2_norm
from vicontrol.mesh import build_rectangle_mesh, refine_uniform
from vicontrol.vi import (
    brute_force_oracle,
    dump_solution,
    make_obstacle_problem,
    solve_pdas,
    solve_psor,
    verify_vi,
)


@pytest.fixture
def mesh3():
    return build_rectangle_mesh(3, 3, gamma1_sides=("left",))


def random_problem(mesh, rng):
    g = rng.uniform(-60, 20, mesh.num_vertices)
    b = rng.uniform(0.02, 1.0)
    q = rng.uniform(-2, 2)
    return make_obstacle_problem(mesh, g, float(q), float(b))


def test_constant_solution_both_solvers(mesh3):
    prob = make_obstacle_problem(mesh3, 0.0, 0.0, 1.0)
    for solver in (solve_psor, solve_pdas):
        sol = solver(prob)
        assert sol.converged
        assert np.max(np.abs(sol.u - 1.0)) <= 1e-12
        assert sol.active_set.size == 0


def test_inactive_case_matches_linear_solve(mesh3):
    prob = make_obstacle_problem(mesh3, 10.0, 0.0, 1.0)
    free = prob.dofs.free_nodes
    dirichlet = prob.dofs.dirichlet_nodes
    a = prob.stiffness
    rhs = prob.load[free] - a[np.ix_(free, dirichlet)] @ np.ones(dirichlet.size)
    u_lin = np.ones(prob.size)
    u_lin[free] = spla.spsolve(a[np.ix_(free, free)].tocsc(), rhs)
    for solver in (solve_psor, solve_pdas):
        sol = solver(prob, tol=1e-12)
        assert sol.active_set.size == 0
        assert np.max(np.abs(sol.u - u_lin)) <= 1e-9


def test_active_case_matches_oracle(mesh3):
    prob = make_obstacle_problem(mesh3, -50.0, 0.0, 0.05)
    oracle = brute_force_oracle(prob)
    assert oracle.active_set.size > 0
    for solver in (solve_psor, solve_pdas):
        sol = solver(prob, tol=1e-12)
        assert sol.converged
        assert np.max(np.abs(sol.u - oracle.u)) <= 1e-9
        assert np.array_equal(sol.active_set, oracle.active_set)


def test_all_active_when_b_zero(mesh3):
    prob = make_obstacle_problem(mesh3, -1.0, 0.0, 0.0)
    sol = solve_pdas(prob)
    assert np.all(sol.u == 0.0)
    assert np.array_equal(sol.active_set, prob.dofs.free_nodes)
    oracle = brute_force_oracle(prob)
    assert np.all(oracle.u == 0.0)


def test_pdas_one_update_when_inactive(mesh3):
    prob = make_obstacle_problem(mesh3, 10.0, 0.0, 1.0)
    sol = solve_pdas(prob)
    assert sol.iterations == 1


def test_psor_rejects_bad_omega(mesh3):
    prob = make_obstacle_problem(mesh3, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        solve_psor(prob, omega=2.0)


def test_psor_not_converged_flagged():
    mesh = build_rectangle_mesh(6, 6, gamma1_sides=("left",))
    prob = make_obstacle_problem(mesh, 10.0, 0.0, 1.0)
    sol = solve_psor(prob, max_iter=1, tol=1e-14)
    assert not sol.converged
    assert sol.iterations == 1


def test_negative_dirichlet_rejected(mesh3):
    with pytest.raises(ValueError):
        make_obstacle_problem(mesh3, 0.0, 0.0, -1.0)


def test_brute_force_limits():
    mesh = build_rectangle_mesh(4, 4, gamma1_sides=("left",))  # 20 free nodes
    prob = make_obstacle_problem(mesh, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        brute_force_oracle(prob)


def test_brute_force_unique_partition(mesh3):
    rng = np.random.default_rng(5)
    prob = random_problem(mesh3, rng)
    oracle = brute_force_oracle(prob)
    # re-running from scratch gives the same active set; solvers agree
    again = brute_force_oracle(prob)
    assert np.array_equal(oracle.active_set, again.active_set)
    sol = solve_pdas(prob, tol=1e-12)
    assert np.max(np.abs(sol.u - oracle.u)) <= 1e-9


def test_uniqueness_from_random_starts(mesh3):
    prob = make_obstacle_problem(mesh3, -30.0, 1.0, 0.4)
    rng = np.random.default_rng(9)
    ref = solve_psor(prob, tol=1e-12).u
    for _ in range(5):
        u0 = rng.uniform(0.0, 2.0, prob.size)
        sol = solve_psor(prob, tol=1e-12, u0=u0)
        assert sol.converged
        assert np.max(np.abs(sol.u - ref)) <= 1e-8


def test_cross_method_agreement_in_v_norm():
    mesh = build_rectangle_mesh(6, 6, gamma1_sides=("left", "bottom"))
    rng = np.random.default_rng(17)
    for _ in range(5):
        g = rng.uniform(-40, 10, mesh.num_vertices)
        prob = make_obstacle_problem(mesh, g, 0.5, 0.3)
        u1 = solve_psor(prob, tol=1e-12).u
        u2 = solve_pdas(prob, tol=1e-12).u
        assert h1_norm(u1 - u2, mesh) <= 1e-8


def test_kkt_invariants_of_solution(mesh3):
    prob = make_obstacle_problem(mesh3, -50.0, 0.0, 0.05)
    sol = solve_pdas(prob, tol=1e-12)
    tol = 1e-9 * prob.residual_scale()
    assert np.all(sol.u[prob.dofs.dirichlet_nodes] == 0.05)
    assert np.all(sol.u >= -tol)
    r = prob.stiffness @ sol.u - prob.load
    free = prob.dofs.free_nodes
    active = set(sol.active_set.tolist())
    for i in free:
        if i in active:
            assert r[i] >= -tol and sol.u[i] <= tol
        else:
            assert abs(r[i]) <= tol


def test_verify_vi_probes(mesh3):
    prob = make_obstacle_problem(mesh3, -50.0, 0.0, 0.05)
    sol = solve_pdas(prob, tol=1e-12)
    # v = u gives exactly zero
    assert verify_vi(prob, sol, [sol.u]) == pytest.approx(0.0, abs=1e-30)
    # constant b is in the feasible set
    assert verify_vi(prob, sol, [np.full(prob.size, 0.05)]) >= -1e-10
    rng = np.random.default_rng(23)
    probes = []
    for _ in range(100):
        v = rng.uniform(0.0, 1.0, prob.size)
        v[prob.dofs.dirichlet_nodes] = 0.05
        probes.append(v)
    assert verify_vi(prob, sol, probes) >= -1e-9


def test_verify_vi_rejects_infeasible_probe(mesh3):
    prob = make_obstacle_problem(mesh3, 0.0, 0.0, 1.0)
    sol = solve_pdas(prob)
    bad = np.full(prob.size, -1.0)
    with pytest.raises(ValueError):
        verify_vi(prob, sol, [bad])


def test_uniform_bound_over_levels():
    # fixed g, refinement levels 0..4: V-norms stay bounded, no growth trend
    params_g = -20.0
    norms = []
    mesh = build_rectangle_mesh(2, 2, gamma1_sides=("left",))
    for _ in range(5):
        prob = make_obstacle_problem(mesh, params_g, 0.0, 0.5)
        sol = solve_pdas(prob, tol=1e-12)
        assert sol.converged
        norms.append(h1_norm(sol.u, mesh))
        mesh = refine_uniform(mesh)
    assert max(norms) / min(norms) < 10.0
    # no growth trend once resolved: the tail levels plateau
    assert norms[-1] <= norms[-2] * 1.05


def test_lipschitz_bound_random_pairs():
    mesh = build_rectangle_mesh(5, 5, gamma1_sides=("left",))
    lam = coercivity_constant(mesh)
    rng = np.random.default_rng(31)
    for _ in range(20):
        g1 = rng.uniform(-10, 10, mesh.num_vertices)
        g2 = rng.uniform(-10, 10, mesh.num_vertices)
        u1 = solve_pdas(make_obstacle_problem(mesh, g1, 0.0, 0.5), tol=1e-12).u
        u2 = solve_pdas(make_obstacle_problem(mesh, g2, 0.0, 0.5), tol=1e-12).u
        lhs = h1_norm(u2 - u1, mesh)
        rhs = l2_norm(g2 - g1, mesh) / lam
        assert lhs <= rhs + 1e-9


def test_strong_continuity_in_g():
    # g_n -> g strongly: states converge (Lipschitz consequence)
    mesh = build_rectangle_mesh(4, 4, gamma1_sides=("left",))
    rng = np.random.default_rng(37)
    g = rng.uniform(-20, 5, mesh.num_vertices)
    u = solve_pdas(make_obstacle_problem(mesh, g, 0.0, 0.3), tol=1e-12).u
    d = rng.normal(size=mesh.num_vertices)
    errs = []
    for eps in (1e-1, 1e-2, 1e-3):
        un = solve_pdas(make_obstacle_problem(mesh, g + eps * d, 0.0, 0.3), tol=1e-12).u
        errs.append(h1_norm(un - u, mesh))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 1e-2


def test_solution_dump(tmp_path, mesh3):
    prob = make_obstacle_problem(mesh3, -50.0, 0.0, 0.05)
    sol = solve_pdas(prob)
    path = tmp_path / "sol.csv"
    dump_solution(mesh3, sol, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,u,active"
    assert len(lines) == mesh3.num_vertices + 1
    assert sum(l.endswith(",1") for l in lines[1:]) == sol.active_set.size
