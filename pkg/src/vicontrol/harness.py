"""Numerical experiments: mesh-refinement convergence of states, costs and
optimal controls, the Lipschitz stability bound, and a randomized scan of the
ordering conjecture between combined solutions.

Continuous-problem quantities have no closed form here; every experiment
compares against a heavily refined discrete solve (the "oracle" level).
All experiments are deterministic given their seed and emit CSV rows plus a
JSON-able summary dict.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    assemble_mass,
    assemble_stiffness,
    coercivity_constant,
    h1_norm,
    l2_norm,
)
from .control import ControlProblem, CostParams
from .mesh import Mesh, interpolate, prolongate, refine_times, refine_uniform


@dataclass
class ConvergenceRow:
    level: int
    h: float
    error_v: float
    error_h: float
    cost: float
    control_distance: float = float("nan")


@dataclass
class ConvergenceTable:
    reference: str
    rows: list[ConvergenceRow] = field(default_factory=list)
    rate_v: float = float("nan")
    rate_h: float = float("nan")
    rate_cost: float = float("nan")

    def csv_lines(self) -> list[str]:
        lines = ["level,h,error_V,error_H,cost,control_distance"]
        for r in self.rows:
            lines.append(
                f"{r.level},{r.h!r},{r.error_v!r},{r.error_h!r},{r.cost!r},{r.control_distance!r}"
            )
        return lines


@dataclass
class OpenProblemRecord:
    trial: int
    mu: float
    pointwise_margin: float  # min over nodes of u3 - u4
    nonnegativity_margin: float  # min over nodes of u4
    norm_margin: float  # ||u3||_H - ||u4||_H
    violation: bool


def fit_rate(hs, errors, tail: int | None = None) -> float:
    """Least-squares slope of log(error) against log(h).

    Uses the last max(3, n-1) points by default to limit preasymptotic
    pollution. Degenerate (zero/nonpositive) errors give nan.
    """
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if tail is None:
        tail = max(3, len(hs) - 1)
    hs = hs[-tail:]
    errors = errors[-tail:]
    if len(hs) < 2 or np.any(errors <= 0):
        return float("nan")
    slope = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    return float(slope)


def random_control(
    mesh: Mesh, rng: np.random.Generator, amplitude: float = 10.0, smooth: bool = False
) -> np.ndarray:
    """P1 control with nodal values uniform in [-amplitude, amplitude].

    With smooth=True one mass-matrix application (area-normalized) damps the
    high frequencies, modelling more regular data.
    """
    g = rng.uniform(-amplitude, amplitude, size=mesh.num_vertices)
    if smooth:
        m = assemble_mass(mesh)
        lumped = np.asarray(m.sum(axis=1)).ravel()
        g = (m @ g) / lumped
    return g


def _mesh_hierarchy(base: Mesh, levels: int) -> list[Mesh]:
    meshes = [base]
    for _ in range(levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def run_state_convergence(
    base_mesh: Mesh,
    g,
    params: CostParams,
    levels: int = 4,
    oracle_extra_levels: int = 2,
    solver: str = "pdas",
) -> ConvergenceTable:
    """Errors of the state solution against a fine-mesh oracle, per level.

    g is a callable or constant, interpolated on each mesh. Coarse solutions
    are prolongated to the oracle mesh, where all norms are computed.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if oracle_extra_levels < 1:
        raise ValueError("oracle_extra_levels must be >= 1")
    meshes = _mesh_hierarchy(base_mesh, levels)
    oracle_mesh = refine_times(meshes[-1], oracle_extra_levels)

    oracle_cp = ControlProblem(oracle_mesh, params, solver)
    u_oracle = oracle_cp.solve_state(interpolate(oracle_mesh, g)).u
    a_o = oracle_cp.stiffness
    m_o = oracle_cp.mass

    table = ConvergenceTable(
        reference=f"state oracle at level {oracle_mesh.level} (h={oracle_mesh.h!r})"
    )
    for mesh in meshes:
        cp = ControlProblem(mesh, params, solver)
        g_h = interpolate(mesh, g)
        report = cp.cost(g_h)
        diff = prolongate(mesh, report.state.u, oracle_mesh) - u_oracle
        table.rows.append(
            ConvergenceRow(
                level=mesh.level,
                h=mesh.h,
                error_v=h1_norm(diff, oracle_mesh, a_o, m_o),
                error_h=l2_norm(diff, oracle_mesh, m_o),
                cost=report.cost,
            )
        )
    hs = [r.h for r in table.rows]
    table.rate_v = fit_rate(hs, [r.error_v for r in table.rows])
    table.rate_h = fit_rate(hs, [r.error_h for r in table.rows])
    return table


def run_cost_convergence(
    base_mesh: Mesh,
    g,
    params: CostParams,
    levels: int = 4,
    oracle_extra_levels: int = 2,
    solver: str = "pdas",
) -> dict:
    """Per-level gap |J_level(g) - J_oracle(g)| and its fitted rate."""
    meshes = _mesh_hierarchy(base_mesh, levels)
    oracle_mesh = refine_times(meshes[-1], oracle_extra_levels)
    j_oracle = ControlProblem(oracle_mesh, params, solver).cost(
        interpolate(oracle_mesh, g)
    ).cost
    rows = []
    for mesh in meshes:
        j = ControlProblem(mesh, params, solver).cost(interpolate(mesh, g)).cost
        rows.append({"level": mesh.level, "h": mesh.h, "cost": j, "gap": abs(j - j_oracle)})
    rate = fit_rate([r["h"] for r in rows], [r["gap"] for r in rows])
    return {"oracle_cost": j_oracle, "oracle_level": oracle_mesh.level, "rows": rows, "rate": rate}


def run_control_convergence(
    base_mesh: Mesh,
    params: CostParams,
    levels: int = 4,
    oracle_extra_levels: int = 2,
    g0=0.0,
    solver: str = "pdas",
    max_iter: int = 500,
) -> ConvergenceTable:
    """Distances of per-level optimal controls/states to the finest-level run."""
    meshes = _mesh_hierarchy(base_mesh, levels)
    oracle_mesh = refine_times(meshes[-1], oracle_extra_levels)

    results = []
    for mesh in meshes + [oracle_mesh]:
        cp = ControlProblem(mesh, params, solver)
        res = cp.optimize(interpolate(mesh, g0), max_iter=max_iter)
        if not res.converged:
            raise RuntimeError(
                f"optimizer did not converge at level {mesh.level} "
                f"(gradient norm {res.gradient_norm:.3e})"
            )
        results.append((mesh, res))

    oracle_mesh, oracle_res = results[-1]
    a_o = assemble_stiffness(oracle_mesh)
    m_o = assemble_mass(oracle_mesh)
    table = ConvergenceTable(
        reference=f"optimizer oracle at level {oracle_mesh.level} (h={oracle_mesh.h!r})"
    )
    for mesh, res in results[:-1]:
        du = prolongate(mesh, res.state.u, oracle_mesh) - oracle_res.state.u
        dg = prolongate(mesh, res.control, oracle_mesh) - oracle_res.control
        table.rows.append(
            ConvergenceRow(
                level=mesh.level,
                h=mesh.h,
                error_v=h1_norm(du, oracle_mesh, a_o, m_o),
                error_h=l2_norm(du, oracle_mesh, m_o),
                cost=res.cost,
                control_distance=l2_norm(dg, oracle_mesh, m_o),
            )
        )
    hs = [r.h for r in table.rows]
    table.rate_v = fit_rate(hs, [r.error_v for r in table.rows])
    table.rate_h = fit_rate(hs, [r.control_distance for r in table.rows])
    return table


def run_lipschitz_check(
    mesh: Mesh,
    params: CostParams,
    trials: int = 50,
    seed: int = 0,
    amplitude: float = 10.0,
    solver: str = "pdas",
) -> dict:
    """Worst ratio lambda_h * ||u2 - u1||_V / ||g2 - g1||_H over random pairs.

    The stability bound guarantees the ratio never exceeds 1; pairs with
    coinciding controls are resampled.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    cp = ControlProblem(mesh, params, solver)
    lam = coercivity_constant(mesh, cp.stiffness, cp.mass)
    a, m = cp.stiffness, cp.mass

    ratios = []
    for _ in range(trials):
        while True:
            g1 = random_control(mesh, rng, amplitude)
            g2 = random_control(mesh, rng, amplitude)
            dg = l2_norm(g2 - g1, mesh, m)
            if dg > 0:
                break
        du = cp.solve_state(g2).u - cp.solve_state(g1).u
        ratios.append(lam * h1_norm(du, mesh, a, m) / dg)
    return {
        "trials": trials,
        "seed": seed,
        "lambda_h": lam,
        "worst_ratio": max(ratios),
        "ratios": ratios,
    }


def run_open_problem_scan(
    mesh: Mesh,
    params: CostParams,
    trials: int = 100,
    mu_grid=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    seed: int = 0,
    amplitude: float = 10.0,
    tol: float = 1e-9,
    solver: str = "pdas",
) -> tuple[list[OpenProblemRecord], dict]:
    """Randomized search for violations of 0 <= u4(mu) <= u3(mu).

    u3 is the convex combination of the two states, u4 the state of the
    combined control. Whether the ordering can fail is open; the scan reports
    margins and counts, it does not assert an outcome. The implication
    (pointwise ordering holds => norm ordering holds) is recorded per record.
    """
    mu_grid = [float(mu) for mu in mu_grid]
    if any(mu < 0 or mu > 1 for mu in mu_grid):
        raise ValueError("mu_grid values must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    cp = ControlProblem(mesh, params, solver)
    m = cp.mass

    records = []
    for trial in range(trials):
        g1 = random_control(mesh, rng, amplitude)
        g2 = random_control(mesh, rng, amplitude)
        u1 = cp.solve_state(g1).u
        u2 = cp.solve_state(g2).u
        for mu in mu_grid:
            u3 = mu * u1 + (1.0 - mu) * u2
            u4 = cp.solve_state(mu * g1 + (1.0 - mu) * g2).u
            pointwise = float(np.min(u3 - u4))
            nonneg = float(np.min(u4))
            norm_margin = l2_norm(u3, mesh, m) - l2_norm(u4, mesh, m)
            records.append(
                OpenProblemRecord(
                    trial=trial,
                    mu=mu,
                    pointwise_margin=pointwise,
                    nonnegativity_margin=nonneg,
                    norm_margin=norm_margin,
                    violation=min(pointwise, nonneg, norm_margin) < -tol,
                )
            )
    pointwise_ok = [r for r in records if min(r.pointwise_margin, r.nonnegativity_margin) >= -tol]
    summary = {
        "trials": trials,
        "mu_grid": mu_grid,
        "seed": seed,
        "tolerance": tol,
        "records": len(records),
        "violations": sum(r.violation for r in records),
        "pointwise_violations": sum(
            1 for r in records if min(r.pointwise_margin, r.nonnegativity_margin) < -tol
        ),
        "norm_violations": sum(1 for r in records if r.norm_margin < -tol),
        "implication_holds": all(r.norm_margin >= -tol for r in pointwise_ok),
        "worst_pointwise_margin": min(r.pointwise_margin for r in records),
        "worst_norm_margin": min(r.norm_margin for r in records),
    }
    return records, summary


def scan_csv_lines(records: list[OpenProblemRecord]) -> list[str]:
    lines = ["trial,mu,pointwise_margin,nonnegativity_margin,norm_margin,violation"]
    for r in records:
        lines.append(
            f"{r.trial},{r.mu!r},{r.pointwise_margin!r},{r.nonnegativity_margin!r},"
            f"{r.norm_margin!r},{int(r.violation)}"
        )
    return lines


def write_lines(path, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(value):
    """Strict-JSON conversion: numpy scalars to Python, non-finite to null."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
