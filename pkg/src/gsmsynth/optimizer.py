"""Staged-penalty Riemannian steepest descent.

The design variables are one unitary symmetric GSM per DOF class plus the
factored excitations. Gradients are computed in closed form by an adjoint
solve that reuses the LU factorization of the coupled system.

Gradient convention: for a real cost ``phi`` of complex ``z`` the Euclidean
gradient is ``dphi/dRe(z) + 1j * dphi/dIm(z)``, so that
``dphi = Re(vdot(grad, dz))``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .coupled import CouplingMatrix, CoupledSystem, DofAssignment, assemble_element_gsms
from .errors import ConfigurationError, DimensionError, GradientUndefinedError, GsmSynthError
from .manifolds import DesignPoint, ExcitationSet, TangentVector, retract, riemannian_gradient, us_random
from .pattern import SENTINEL_COST, ZERO_BEAM_EPS, BeamSpec, ModalFarFieldSet

__all__ = [
    "STRATEGIES",
    "DEFAULT_ALPHAS",
    "StageSchedule",
    "IterationRecord",
    "OptimizationTrace",
    "Problem",
    "StageError",
    "dof_strategy",
    "initial_design",
    "euclidean_gradient",
    "descend_stage",
    "staged_optimize",
    "write_trace_csv",
]

STRATEGIES = ("PointSymmetry", "EqualElements", "EdgeCornerInternal", "Alternating")
DEFAULT_ALPHAS = (0.0, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5)
DEFAULT_MARGIN_DB = 0.01


def dof_strategy(name: str, rows: int, cols: int) -> DofAssignment:
    """Element-to-class assignment for a named strategy (column-major element order)."""
    if rows < 1 or cols < 1:
        raise ConfigurationError("grid dimensions must be positive")
    K = rows * cols
    k = np.arange(K)
    col, row = np.divmod(k, rows)
    if name == "PointSymmetry":
        cls = np.minimum(k, K - 1 - k)
    elif name == "EqualElements":
        cls = np.zeros(K, dtype=int)
    elif name == "EdgeCornerInternal":
        if rows < 3 or cols < 3:
            raise ConfigurationError("EdgeCornerInternal needs at least a 3x3 grid")
        on_r = (row == 0) | (row == rows - 1)
        on_c = (col == 0) | (col == cols - 1)
        cls = np.where(on_r & on_c, 1, np.where(on_r | on_c, 2, 0))
    elif name == "Alternating":
        if K < 2:
            raise ConfigurationError("Alternating needs at least two elements")
        cls = (row + col) % 2
    else:
        raise ConfigurationError(f"unknown DOF strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    return DofAssignment(cls, rows, cols, name)


@dataclass(frozen=True)
class StageSchedule:
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    tol: float = 1e-4
    max_iter: int = 500

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        if not a:
            raise ConfigurationError("schedule needs at least one stage")
        if any(x < 0 or not np.isfinite(x) for x in a):
            raise ConfigurationError("penalty weights must be finite and nonnegative")
        if any(b <= c for c, b in zip(a[1:], a[2:])) or (len(a) > 1 and a[1] <= a[0]):
            raise ConfigurationError("penalty weights must increase strictly")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigurationError("tolerance must be positive and max_iter at least 1")
        object.__setattr__(self, "alphas", a)


@dataclass(frozen=True)
class IterationRecord:
    stage: int
    iteration: int
    cost: float
    grad_norm: float
    step: float
    elapsed_s: float


@dataclass
class OptimizationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    stage_starts: list[int] = field(default_factory=list)
    stalled: list[bool] = field(default_factory=list)

    def stage(self, index: int) -> list[IterationRecord]:
        return [r for r in self.records if r.stage == index]

    def costs(self, index: int | None = None) -> np.ndarray:
        recs = self.records if index is None else self.stage(index)
        return np.array([r.cost for r in recs])

    def extend(self, other: "OptimizationTrace") -> None:
        self.stage_starts.append(len(self.records))
        self.records.extend(other.records)
        self.stalled.extend(other.stalled)


class StageError(GsmSynthError):
    """A stage failed; ``stage`` holds its index."""

    def __init__(self, stage: int, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class _BeamRows:
    target: np.ndarray   # (KN,)
    side: np.ndarray     # (|M_S|, KN)
    xpol: np.ndarray     # (|M_X|, KN)
    sll: float
    xpr: float


class Problem:
    """Coupling, far fields, beam table and DOF assignment of one synthesis run.

    Projection rows ``u . F(xi)`` are precomputed so that every cost term is a
    row-vector product with the coefficient vector ``f``.

    The optimizer works against targets tightened by ``margin_db``. A finite
    penalty weight leaves violations of order ``1/alpha``; the margin absorbs
    them so the final design meets the configured targets exactly.
    """

    def __init__(self, G: CouplingMatrix, fields: ModalFarFieldSet, beams: Sequence[BeamSpec],
                 assignment: DofAssignment, n_ports: int = 1, margin_db: float = DEFAULT_MARGIN_DB):
        if fields.n_elements != G.n_elements or fields.n_modes != G.n_modes:
            raise DimensionError("far fields and coupling disagree on K or N")
        if assignment.n_elements != G.n_elements:
            raise DimensionError("assignment and coupling disagree on K")
        if not beams:
            raise DimensionError("at least one beam is required")
        self.G = G
        self.fields = fields
        self.beams = list(beams)
        self.assignment = assignment
        self.n_ports = n_ports
        if margin_db < 0:
            raise ConfigurationError("target margin must be nonnegative")
        self.margin_db = float(margin_db)
        shrink = 10 ** (-self.margin_db / 20)
        self._rows = []
        for b in self.beams:
            self._rows.append(_BeamRows(
                fields.projection(b.u_d, fields.indices([b.target]))[0],
                fields.projection(b.u_d, fields.indices(b.sidelobe_angles)),
                fields.projection(b.u_x, fields.indices(b.xpol_angles)),
                b.sll_lin * shrink, b.xpr_lin * shrink))

    @property
    def n_states(self) -> int:
        return len(self.beams)

    def check(self, x: DesignPoint) -> None:
        n_ports = x.class_gsms[0].n_ports
        rp, c, s = x.excitations.layout
        a = self.assignment
        if x.class_gsms[0].n_modes != self.G.n_modes or n_ports != self.n_ports:
            raise DimensionError("design GSMs do not match the dataset N or P")
        if x.n_classes != a.n_classes:
            raise DimensionError(f"design has {x.n_classes} classes, assignment needs {a.n_classes}")
        if (rp, c, s) != (a.rows * n_ports, a.cols, self.n_states):
            raise DimensionError(f"excitation layout {(rp, c, s)} does not match grid and beam count")

    def system(self, x: DesignPoint) -> CoupledSystem:
        return CoupledSystem(assemble_element_gsms(self.assignment, x.class_gsms), self.G)

    def coefficients(self, x: DesignPoint) -> np.ndarray:
        """Outgoing modal coefficients ``f`` of all states, shape ``(KN, S)``."""
        return self.system(x).solve(x.excitations.port_waves()).f

    def _terms(self, f: np.ndarray, alpha: float, with_grad: bool):
        total = 0.0
        grad = np.zeros_like(f) if with_grad else None
        sentinel = False
        for s, br in enumerate(self._rows):
            fs = f[:, s]
            zt = br.target @ fs
            m = abs(zt)
            if alpha > 0 and m < ZERO_BEAM_EPS:
                total += SENTINEL_COST
                sentinel = True
                continue
            cost = -m * m
            g_t = -2.0 * zt
            if alpha > 0:
                for rows, lin in ((br.side, br.sll), (br.xpol, br.xpr)):
                    z = rows @ fs
                    az = np.abs(z)
                    r = az / (m * lin)
                    gam = np.maximum(r - 1.0, 0.0)
                    cost += alpha * float(np.sum(gam * gam))
                    if with_grad:
                        act = gam > 0
                        if np.any(act):
                            c = 2 * alpha * gam[act]
                            g_z = c / (m * lin) * z[act] / az[act]
                            grad[:, s] += rows[act].conj().T @ g_z
                            g_t += float(np.sum(c * (-r[act] / m))) * (zt / m)
            total += cost
            if with_grad:
                grad[:, s] += br.target.conj() * g_t
        return total, grad, sentinel

    def penalty_arguments(self, x: DesignPoint) -> np.ndarray:
        """All gamma arguments against the configured (untightened) targets."""
        f = self.coefficients(x)
        out = []
        for s, (br, b) in enumerate(zip(self._rows, self.beams)):
            m = abs(br.target @ f[:, s])
            out.append(np.abs(br.side @ f[:, s]) / (m * b.sll_lin))
            out.append(np.abs(br.xpol @ f[:, s]) / (m * b.xpr_lin))
        return np.concatenate(out)

    def cost(self, x: DesignPoint, alpha: float) -> float:
        return self._terms(self.coefficients(x), alpha, False)[0]

    def cost_and_gradient(self, x: DesignPoint, alpha: float) -> tuple[float, TangentVector]:
        """Cost and ambient (Euclidean) gradient with respect to all design entries."""
        system = self.system(x)
        exc = x.excitations
        v = exc.port_waves()
        sol = system.solve(v)
        cost, e_f, sentinel = self._terms(sol.f, alpha, True)
        if sentinel:
            raise GradientUndefinedError("main-beam field vanished; shrink the step")
        K, N, P = system.K, system.N, system.P
        lam = system.solve_adjoint(e_f).reshape(K, N, -1)
        a = sol.a.reshape(K, N, -1)
        vb = v.reshape(K, P, -1)
        g_s = np.einsum("kis,kjs->kij", lam, a.conj())
        g_t = np.einsum("kis,kjs->kij", lam, vb.conj())
        g_v = np.einsum("kji,kjs->kis", system.T.conj(), lam)  # T^H lambda, (K, P, S)
        gsms = []
        for d, gsm in enumerate(x.class_gsms):
            members = self.assignment.members(d)
            blk = np.zeros_like(gsm.entries)
            blk[:N, :N] = g_s[members].sum(axis=0)
            blk[:N, N:] = g_t[members].sum(axis=0)
            gsms.append(blk)
        rp, C, _ = exc.layout
        g_v = g_v.reshape(C, rp, -1)  # column-major: element block c holds rows*ports entries
        g_static = np.einsum("cms,cs->mc", g_v, exc.dynamic.conj())
        g_dynamic = np.einsum("mc,cms->cs", exc.static.conj(), g_v)
        return cost, TangentVector(gsms, g_static, g_dynamic)


def euclidean_gradient(x: DesignPoint, problem: Problem, alpha: float) -> TangentVector:
    return problem.cost_and_gradient(x, alpha)[1]


def initial_design(assignment: DofAssignment, n_modes: int, n_ports: int, n_states: int,
                   seed: int | None = 0) -> DesignPoint:
    """Random class GSMs with uniform, zero-phase excitations."""
    rng = np.random.default_rng(seed)
    gsms = tuple(us_random(n_modes + n_ports, rng, n_modes) for _ in range(assignment.n_classes))
    exc = ExcitationSet.uniform(assignment.rows, assignment.cols, n_states, n_ports)
    return DesignPoint(gsms, exc)


ARMIJO = 1e-4
CONTRACTION = 0.5
STEP_MIN, STEP_MAX = 1e-6, 1e2
MAX_BACKTRACKS = 40


def descend_stage(x0: DesignPoint, alpha: float, problem: Problem, tol: float = 1e-4,
                  max_iter: int = 500, stage: int = 0, clock=time.perf_counter):
    """Steepest descent with Armijo backtracking at a fixed penalty weight.

    Stops when the cost decrease stays below ``tol`` for two successive
    iterations or after ``max_iter`` iterations. A failed line search ends the
    stage at the current iterate and sets the stalled flag.
    """
    problem.check(x0)
    t0 = clock()
    trace = OptimizationTrace(stage_starts=[0])
    x = x0
    cost, eg = problem.cost_and_gradient(x, alpha)
    g = riemannian_gradient(x, eg)
    gn = g.norm()
    trace.records.append(IterationRecord(stage, 0, float(cost), gn, 0.0, clock() - t0))
    step = min(max(1.0 / gn, STEP_MIN), STEP_MAX) if gn > 0 else STEP_MIN
    small = 0
    stalled = False
    for it in range(1, max_iter + 1):
        if gn == 0:
            break
        direction = (-1.0) * g
        slope = gn * gn
        t = step
        accepted = None
        for _ in range(MAX_BACKTRACKS):
            trial = retract(x, direction, t)
            try:
                c_new = problem.cost(trial, alpha)
            except GsmSynthError:
                c_new = np.inf
            if c_new <= cost - ARMIJO * t * slope:
                accepted = (trial, c_new)
                break
            t *= CONTRACTION
        if accepted is None:
            stalled = True
            break
        x_new, c_new = accepted
        c_new, eg = problem.cost_and_gradient(x_new, alpha)
        g_new = riemannian_gradient(x_new, eg)
        # Barzilai-Borwein step from the ambient differences
        s_vec = t * direction
        y_vec = g_new - g
        sy = abs(s_vec.inner(y_vec))
        step = s_vec.inner(s_vec) / sy if sy > 0 else t
        step = min(max(step, STEP_MIN), STEP_MAX)
        decrease = cost - c_new
        x, g, cost = x_new, g_new, c_new
        gn = g.norm()
        trace.records.append(IterationRecord(stage, it, float(cost), gn, float(t), clock() - t0))
        small = small + 1 if decrease < tol else 0
        if small >= 2:
            break
    trace.stalled.append(stalled)
    return x, trace


def staged_optimize(x0: DesignPoint, schedule: StageSchedule, problem: Problem, clock=time.perf_counter,
                    callback=None):
    """Run one descent stage per penalty weight, warm-starting each from the last."""
    x = x0
    full = OptimizationTrace()
    for i, alpha in enumerate(schedule.alphas):
        try:
            x, tr = descend_stage(x, alpha, problem, schedule.tol, schedule.max_iter, stage=i, clock=clock)
        except GsmSynthError as exc:
            raise StageError(i, exc) from exc
        full.extend(tr)
        if callback is not None:
            callback(i, x, tr)
    return x, full


def write_trace_csv(trace: OptimizationTrace, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["stage", "iter", "cost", "grad_norm", "step", "elapsed_s"])
        for r in trace.records:
            wr.writerow([r.stage, r.iteration, repr(float(r.cost)), repr(float(r.grad_norm)), repr(float(r.step)),
                         f"{r.elapsed_s:.6f}"])
