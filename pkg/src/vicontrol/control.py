"""Quadratic cost over distributed controls and its minimization.

The cost of a control g is J(g) = 1/2 ||u_g||_L2^2 + M/2 ||g||_L2^2 where
u_g solves the discrete obstacle problem. The gradient is computed with the
active set of u_g frozen (the solution map is piecewise linear in g, so this
is the exact gradient wherever the active set is locally constant), and the
minimization uses gradient descent with Barzilai-Borwein steps safeguarded
by Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (
    assemble_boundary_flux,
    assemble_mass,
    assemble_stiffness,
    dof_map,
)
from .mesh import Mesh, interpolate
from .vi import ObstacleProblem, SolverError, VISolution, solve_pdas, solve_psor


@dataclass(frozen=True)
class CostParams:
    """Cost weight M plus the state-problem data q (flux) and b (Dirichlet)."""

    weight: float
    flux: object = 0.0  # callable or constant on Gamma2
    dirichlet: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"cost weight M must be > 0, got {self.weight}")
        if self.dirichlet < 0:
            raise ValueError(f"dirichlet value must be >= 0, got {self.dirichlet}")


@dataclass
class CostReport:
    cost: float
    state_term: float
    control_term: float
    state: VISolution


@dataclass
class OptimizerResult:
    control: np.ndarray
    state: VISolution
    cost: float
    gradient_norm: float
    cost_history: list[float]
    iterations: int
    converged: bool
    trace: list[dict] = field(default_factory=list)


class ControlProblem:
    """Caches the assembled operators for repeated solves at one mesh."""

    def __init__(self, mesh: Mesh, params: CostParams, solver: str = "pdas"):
        if solver not in ("pdas", "psor"):
            raise ValueError(f"unknown solver {solver!r}")
        self.mesh = mesh
        self.params = params
        self.solver = solver
        self.stiffness = assemble_stiffness(mesh)
        self.mass = assemble_mass(mesh)
        self.flux_load = assemble_boundary_flux(mesh, params.flux)
        self.dofs = dof_map(mesh)

    def as_obstacle_problem(self, g: np.ndarray) -> ObstacleProblem:
        g = self._nodal(g)
        return ObstacleProblem(
            stiffness=self.stiffness,
            load=self.mass @ g - self.flux_load,
            dirichlet_value=self.params.dirichlet,
            dofs=self.dofs,
        )

    def _nodal(self, g) -> np.ndarray:
        if np.isscalar(g) or callable(g):
            return interpolate(self.mesh, g)
        g = np.asarray(g, dtype=float)
        if g.shape != (self.mesh.num_vertices,):
            raise ValueError(
                f"control has shape {g.shape}, expected ({self.mesh.num_vertices},)"
            )
        return g

    def solve_state(self, g, warm_start: np.ndarray | None = None) -> VISolution:
        problem = self.as_obstacle_problem(g)
        if self.solver == "psor":
            sol = solve_psor(problem, u0=warm_start)
        else:
            sol = solve_pdas(problem, u0=warm_start)
        if not sol.converged:
            raise SolverError(
                f"state solve did not converge (residual {sol.complementarity_residual:.3e})"
            )
        return sol

    def l2_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.mass @ v), 0.0)))

    def cost(self, g, state: VISolution | None = None) -> CostReport:
        g = self._nodal(g)
        if state is None:
            state = self.solve_state(g)
        state_term = 0.5 * self.l2_norm(state.u) ** 2
        control_term = 0.5 * self.params.weight * self.l2_norm(g) ** 2
        return CostReport(
            cost=state_term + control_term,
            state_term=state_term,
            control_term=control_term,
            state=state,
        )

    def gradient(self, g, state: VISolution | None = None) -> np.ndarray:
        """H-representative of the cost gradient with the active set frozen.

        Solve A_II p = (M_H u)_I on the inactive free nodes (p = 0 on active
        and Dirichlet nodes); the gradient field is M*g + p.
        """
        g = self._nodal(g)
        if state is None:
            state = self.solve_state(g)
        active_mask = np.zeros(self.mesh.num_vertices, dtype=bool)
        active_mask[state.active_set] = True
        inactive = self.dofs.free_nodes[~active_mask[self.dofs.free_nodes]]
        p = np.zeros(self.mesh.num_vertices)
        if inactive.size:
            a_ii = self.stiffness[np.ix_(inactive, inactive)].tocsc()
            rhs = (self.mass @ state.u)[inactive]
            p[inactive] = spla.spsolve(a_ii, rhs)
            if not np.all(np.isfinite(p[inactive])):
                raise SolverError("singular reduced system in adjoint solve")
        return self.params.weight * g + p

    def optimize(
        self,
        g0,
        gtol: float | None = None,
        max_iter: int = 500,
        armijo: float = 1e-4,
        backtrack: float = 0.5,
    ) -> OptimizerResult:
        """Minimize the cost from g0; monotone descent via Armijo backtracking.

        The first trial step per iteration is the Barzilai-Borwein length from
        the latest curvature pair (fall back to 1 when it is unusable).
        """
        g = self._nodal(g0).copy()
        state = self.solve_state(g)
        report = self.cost(g, state)
        grad = self.gradient(g, state)
        gnorm = self.l2_norm(grad)
        if gtol is None:
            gtol = 1e-8 * max(1.0, gnorm)

        history = [report.cost]
        trace = []
        alpha = 1.0
        prev_g = None
        prev_grad = None
        converged = gnorm <= gtol
        it = 0
        while not converged and it < max_iter:
            it += 1
            if prev_g is not None:
                s = g - prev_g
                y = grad - prev_grad
                sy = float(s @ (self.mass @ y))
                if sy > 0:
                    alpha = float(s @ (self.mass @ s)) / sy
                else:
                    alpha = 1.0
                alpha = min(max(alpha, 1e-12), 1e6)
            step = alpha
            slope = -(gnorm**2)
            accepted = False
            for _ in range(60):
                g_try = g - step * grad
                try:
                    state_try = self.solve_state(g_try, warm_start=state.u)
                except SolverError:
                    step *= backtrack
                    continue
                report_try = self.cost(g_try, state_try)
                if report_try.cost <= report.cost + armijo * step * slope:
                    accepted = True
                    break
                step *= backtrack
            if not accepted:
                break
            prev_g, prev_grad = g, grad
            g, state, report = g_try, state_try, report_try
            grad = self.gradient(g, state)
            gnorm = self.l2_norm(grad)
            history.append(report.cost)
            trace.append(
                {
                    "iteration": it,
                    "cost": report.cost,
                    "gradient_norm": gnorm,
                    "step": step,
                    "active_set_size": int(state.active_set.size),
                }
            )
            converged = gnorm <= gtol
        return OptimizerResult(
            control=g,
            state=state,
            cost=report.cost,
            gradient_norm=gnorm,
            cost_history=history,
            iterations=it,
            converged=converged,
            trace=trace,
        )


def evaluate_cost(mesh: Mesh, params: CostParams, g, solver: str = "pdas") -> CostReport:
    return ControlProblem(mesh, params, solver).cost(g)


def gradient(mesh: Mesh, params: CostParams, g, solver: str = "pdas") -> np.ndarray:
    return ControlProblem(mesh, params, solver).gradient(g)


def optimize(
    mesh: Mesh,
    params: CostParams,
    g0,
    gtol: float | None = None,
    max_iter: int = 500,
    solver: str = "pdas",
) -> OptimizerResult:
    return ControlProblem(mesh, params, solver).optimize(g0, gtol=gtol, max_iter=max_iter)


def convex_combination_states(
    mesh: Mesh, params: CostParams, g1, g2, mu: float, solver: str = "pdas"
) -> tuple[np.ndarray, np.ndarray]:
    """Compare combining solutions against solving for the combined control.

    Returns (u3, u4): u3 = mu*u_{g1} + (1-mu)*u_{g2} and u4 = state of the
    control mu*g1 + (1-mu)*g2.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    cp = ControlProblem(mesh, params, solver)
    g1 = cp._nodal(g1)
    g2 = cp._nodal(g2)
    u1 = cp.solve_state(g1).u
    u2 = cp.solve_state(g2).u
    u3 = mu * u1 + (1.0 - mu) * u2
    u4 = cp.solve_state(mu * g1 + (1.0 - mu) * g2).u
    return u3, u4
