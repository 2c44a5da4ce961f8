"""From an optimized element GSM to realization targets.

The element ports are closed with a load ``Gamma_L``, which leaves a pure
modal scattering matrix ``S0``. Its eigenvalues ``s_n`` map to real modal
eigenvalues ``lambda_n`` through ``s = -(1 - j lambda) / (1 + j lambda)``, so
``lambda = 0`` is a resonant mode and ``s = 1`` is a pole (``|lambda| -> inf``).

Shifting the port reference plane by ``chi`` changes ``S0`` without changing
the array far field, which gives a free parameter for picking targets that are
easy to realize.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (DimensionError, DomainError, FitInfeasibleError, NotDiagonalizableError,
                     ResonanceError, SweepFailedError)
from .manifolds import Gsm, us_random

__all__ = [
    "RealizationTarget",
    "ChiSweep",
    "ToyElement",
    "ToyFit",
    "s_from_lambda",
    "lambda_from_s",
    "load_matrix",
    "terminate",
    "eig_terminated",
    "transmit_eig",
    "realization_target",
    "chi_sweep",
    "backtransform_gsm",
    "rotation",
    "toy_element_gsm",
    "random_toy_element",
    "fit_toy_element",
    "write_chi_sweep_csv",
    "write_realization_report",
]

COND_MAX = 1e12
EIGVEC_COND_MAX = 1e8
POLE_TOL = 1e-6


def s_from_lambda(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    return -(1 - 1j * lam) / (1 + 1j * lam)


def lambda_from_s(s) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 1j * (1 + s) / (s - 1)


def load_matrix(gamma_l, n_ports: int) -> np.ndarray:
    """Load reflection as a ``P x P`` matrix (scalars mean the same load on every port)."""
    g = np.asarray(gamma_l, dtype=complex)
    if g.ndim == 0:
        return g * np.eye(n_ports)
    if g.ndim == 1:
        g = np.diag(g)
    if g.shape != (n_ports, n_ports):
        raise DimensionError(f"load has shape {g.shape}, expected ({n_ports}, {n_ports})")
    return g


def _termination_inverse(gamma_l: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    m = gamma_l - gamma
    if m.size == 0:
        return m
    c = np.linalg.cond(m)
    if not c < COND_MAX:
        raise ResonanceError(f"termination is resonant (condition number {c:.3g})")
    return np.linalg.inv(m)


def terminate(gsm: Gsm, gamma_l=1.0) -> np.ndarray:
    """Modal scattering matrix ``S + T (Gamma_L - Gamma)^-1 R`` of the loaded element."""
    gl = load_matrix(gamma_l, gsm.n_ports)
    return gsm.S + gsm.T @ _termination_inverse(gl, gsm.Gamma) @ gsm.R


def _is_unitary_symmetric(s0: np.ndarray, tol: float = 1e-8) -> bool:
    n = s0.shape[0]
    return (np.linalg.norm(s0 - s0.T) <= tol * np.sqrt(n)
            and np.linalg.norm(s0.conj().T @ s0 - np.eye(n)) <= tol * np.sqrt(n))


def _real_orthogonal_eig(s0: np.ndarray):
    # S0 = X + iY with X, Y real symmetric and commuting, so a generic real
    # combination shares their orthonormal eigenvectors
    x, y = s0.real, s0.imag
    best = None
    for c in (np.sqrt(2.0), np.pi / 7, -np.e / 3):
        _, q = np.linalg.eigh(x + c * y)
        d = q.T @ s0 @ q
        off = np.linalg.norm(d - np.diag(np.diag(d)))
        if best is None or off < best[0]:
            best = (off, q, np.diag(d).copy())
        if off < 1e-12:
            break
    return best[2], best[1].astype(complex)


def _phase_fix(q: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(q) - 1e-12 * np.arange(q.shape[0])[:, None], axis=0)
    piv = q[idx, np.arange(q.shape[1])]
    return q * (np.abs(piv) / piv)[None, :]


def eig_terminated(s0) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues ``lambda_n`` and eigenvector matrix ``Q`` of a terminated matrix.

    Unitary symmetric inputs get real orthogonal eigenvectors. Columns are
    scaled so their largest component is real positive and ordered by
    descending ``|lambda|``, ties by ascending phase of the first component and
    then by the row of the largest component.
    """
    s0 = np.asarray(s0, dtype=complex)
    if s0.ndim != 2 or s0.shape[0] != s0.shape[1]:
        raise DimensionError(f"terminated matrix must be square, got {s0.shape}")
    if not np.all(np.isfinite(s0)):
        raise DomainError("terminated matrix has non-finite entries")
    if _is_unitary_symmetric(s0):
        s, q = _real_orthogonal_eig(s0)
    else:
        s, q = np.linalg.eig(s0)
        q = q / np.linalg.norm(q, axis=0)
        c = np.linalg.cond(q)
        if not c < EIGVEC_COND_MAX:
            raise NotDiagonalizableError(f"eigenvector condition number {c:.3g}")
    q = _phase_fix(q)
    lam = lambda_from_s(s)
    mag = np.where(np.isfinite(np.abs(lam)), np.round(np.abs(lam), 9), np.inf)
    phase = np.round(np.angle(q[0]), 9)
    pivot = np.argmax(np.abs(q) - 1e-12 * np.arange(q.shape[0])[:, None], axis=0)
    order = np.lexsort((pivot, phase, -mag))
    return lam[order], q[:, order]


def transmit_eig(q: np.ndarray, t: np.ndarray, chi: float = 0.0) -> np.ndarray:
    """Port transmission in the eigenbasis, ``Q^T T exp(j chi)``."""
    return q.T @ np.asarray(t) * np.exp(1j * chi)


def _shifted(gsm: Gsm, chi: float) -> Gsm:
    e = np.exp(1j * chi)
    N = gsm.n_modes
    m = gsm.entries.copy()
    m[:N, N:] *= e
    m[N:, :N] *= e
    m[N:, N:] *= e * e
    return Gsm(m, N)


@dataclass(frozen=True)
class RealizationTarget:
    """Eigen-description of a terminated element at a port reference shift ``chi``."""

    lambdas: np.ndarray
    q: np.ndarray
    t_eig: np.ndarray
    r_eig: np.ndarray
    gamma: np.ndarray
    chi: float
    gamma_l: np.ndarray

    def gsm(self) -> Gsm:
        """GSM of the element with shifted reference plane, rebuilt from the target."""
        return backtransform_gsm(self.lambdas, self.q, self.t_eig, self.r_eig, self.gamma, self.gamma_l)


def realization_target(gsm: Gsm, gamma_l=1.0, chi: float = 0.0) -> RealizationTarget:
    """Terminate, eigendecompose and transform the port coupling at shift ``chi`` (radians)."""
    shifted = _shifted(gsm, chi)
    gl = load_matrix(gamma_l, gsm.n_ports)
    lam, q = eig_terminated(terminate(shifted, gl))
    if np.max(np.abs(lam.imag), initial=0.0) <= 1e-8 * (1 + np.max(np.abs(lam.real), initial=0.0)):
        lam = lam.real
    return RealizationTarget(lam, q, q.T @ shifted.T, shifted.R @ q, shifted.Gamma.copy(), float(chi), gl)


def backtransform_gsm(lambda_hat, q_hat, t_eig, r_eig, gamma_hat, gamma_l=1.0) -> Gsm:
    """Assemble the element GSM in the common modal basis from eigen-parameters."""
    q = np.asarray(q_hat, dtype=complex)
    t = np.asarray(t_eig, dtype=complex)
    t = t[:, None] if t.ndim == 1 else t
    r = np.atleast_2d(np.asarray(r_eig, dtype=complex))
    g = np.atleast_2d(np.asarray(gamma_hat, dtype=complex))
    N, P = q.shape[0], g.shape[0]
    if q.shape != (N, N) or t.shape != (N, P) or r.shape != (P, N) or np.size(lambda_hat) != N:
        raise DimensionError("inconsistent shapes for back-transform")
    gl = load_matrix(gamma_l, P)
    s_eig = np.diag(s_from_lambda(lambda_hat)) - t @ _termination_inverse(gl, g) @ r
    eye = np.eye(N)
    S = eye + q @ (s_eig - eye) @ q.T
    return Gsm(np.block([[S, q @ t], [r @ q.T, g]]), N)


@dataclass
class ChiSweep:
    """Eigenvalues over a grid of reference-plane shifts."""

    chi_deg: np.ndarray
    lambdas: np.ndarray          # (n_chi, N), NaN where the termination is singular
    t_abs: np.ndarray            # (n_chi, N) row norms of the transformed transmission
    lambda_bar: np.ndarray       # max |lambda| per grid point
    chi_max_deg: float
    chi_star_deg: float
    chi_argmin_deg: float
    poles_deg: list[float]
    near_pole: bool
    flat: bool
    gamma_l: np.ndarray = field(repr=False, default=None)


def _circ_dist(a, b, period=180.0):
    d = np.abs((np.asarray(a) - b) % period)
    return np.minimum(d, period - d)


def chi_sweep(gsm: Gsm, gamma_l=1.0, grid_deg=None, pole_threshold_deg: float = 5.0) -> ChiSweep:
    """Sweep ``chi`` and pick ``chi* = chi_max + 90 deg`` (mod 180).

    ``chi_max`` maximizes the largest ``|lambda|``. Poles are the shifts where
    an eigenvalue of the terminated matrix reaches ``s = 1``; they are located
    by refining the grid minima of ``min_n |s_n - 1|``.
    """
    grid = np.arange(0.0, 180.0, 1.0) if grid_deg is None else np.asarray(grid_deg, dtype=float)
    if grid.size == 0:
        raise DomainError("empty sweep grid")
    N, P = gsm.n_modes, gsm.n_ports
    gl = load_matrix(gamma_l, P)
    flat = bool(np.max(np.abs(gsm.T), initial=0.0) < 1e-14 and np.max(np.abs(gsm.R), initial=0.0) < 1e-14)

    def s0_at(chi_deg):
        c = np.radians(chi_deg)
        return gsm.S + gsm.T @ _termination_inverse(gl * np.exp(-2j * c), gsm.Gamma) @ gsm.R

    lams = np.full((grid.size, N), np.nan)
    t_abs = np.full((grid.size, N), np.nan)
    dist = np.full(grid.size, np.nan)
    for i, chi in enumerate(grid):
        try:
            s0 = s0_at(chi)
            lam, q = eig_terminated(s0)
        except (ResonanceError, NotDiagonalizableError):
            continue
        lams[i] = lam.real
        t_abs[i] = np.linalg.norm(transmit_eig(q, gsm.T, np.radians(chi)), axis=1)
        dist[i] = np.min(np.abs(np.linalg.eigvals(s0) - 1))
    ok = np.isfinite(dist)
    if not np.any(ok):
        raise SweepFailedError("every sweep point is singular")
    lam_bar = np.max(np.abs(lams), axis=1)
    i_max = int(np.nanargmax(np.where(ok, lam_bar, np.nan)))
    i_min = int(np.nanargmin(np.where(ok, lam_bar, np.nan)))
    chi_max = float(grid[i_max])
    chi_star = float((chi_max + 90.0) % 180.0)

    poles = []
    if not flat and grid.size >= 3:
        step = float(np.median(np.diff(np.sort(grid)))) if grid.size > 1 else 1.0

        def sigma(c):
            try:
                return float(np.min(np.abs(np.linalg.eigvals(s0_at(c)) - 1)))
            except ResonanceError:
                return np.inf

        for i in np.flatnonzero(ok):
            left, right = dist[(i - 1) % grid.size], dist[(i + 1) % grid.size]
            if not (dist[i] <= left and dist[i] < right):
                continue
            res = minimize_scalar(sigma, bounds=(grid[i] - step, grid[i] + step), method="bounded",
                                  options={"xatol": 1e-10})
            if res.fun < POLE_TOL:
                p = float(res.x % 180.0)
                if not any(_circ_dist(p, q) < 1e-6 for q in poles):
                    poles.append(p)
    near = bool(poles) and bool(np.min(_circ_dist(chi_star, np.array(poles))) <= pole_threshold_deg)
    return ChiSweep(grid, lams, t_abs, lam_bar, chi_max, chi_star, float(grid[i_min]),
                    sorted(poles), near, flat, gl)


# toy element model

def rotation(phi_deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(phi_deg)), np.sin(np.radians(phi_deg))
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ToyElement:
    """Two-mode element: rotation angle, modal eigenvalues, port coupling and port reflection.

    ``t_eig`` and ``gamma`` must come from a lossless element; then every choice
    of ``phi`` and ``lambdas`` also describes a lossless element once
    :meth:`with_lambdas` adjusts the coupling phases.
    """

    phi_deg: float
    lambdas: np.ndarray
    t_eig: np.ndarray
    gamma: np.ndarray

    def gsm(self, gamma_l=1.0) -> Gsm:
        return toy_element_gsm(self, gamma_l)

    def with_lambdas(self, lambdas) -> "ToyElement":
        """Same element retuned to new eigenvalues (coupling phases follow the modal phase)."""
        new = np.asarray(lambdas, dtype=float)
        ratio = s_from_lambda(new) / s_from_lambda(self.lambdas)
        return ToyElement(self.phi_deg, new, self.t_eig * np.sqrt(ratio)[:, None], self.gamma)


def toy_element_gsm(element: ToyElement, gamma_l=1.0) -> Gsm:
    t = np.asarray(element.t_eig, dtype=complex)
    return backtransform_gsm(element.lambdas, rotation(element.phi_deg), t, t.T, element.gamma, gamma_l)


def random_toy_element(phi_deg: float, lambdas, seed=None, n_ports: int = 1, gamma_l=1.0) -> ToyElement:
    """Lossless toy element with prescribed rotation and eigenvalues, random port coupling."""
    rng = np.random.default_rng(seed)
    while True:
        base = us_random(2 + n_ports, rng, 2)
        try:
            lam0, q0 = eig_terminated(terminate(base, gamma_l))
        except ResonanceError:
            continue
        if np.all(np.isfinite(lam0)):
            break
    q0 = q0.real
    t0 = q0.T @ base.T
    el = ToyElement(0.0, lam0.real, t0, base.Gamma.copy())
    el = el.with_lambdas(lambdas)
    return ToyElement(float(phi_deg), el.lambdas, el.t_eig, el.gamma)


@dataclass(frozen=True)
class ToyFit:
    element: ToyElement             # exact fit
    snapped: ToyElement             # parameters on the discrete grid
    deviation: float                # distance of Q from a real rotation
    residual: float                 # ||GSM(exact fit) - target||_F
    residual_snapped: float         # ||GSM(snapped) - target||_F
    snap_bound: float               # residual + ||GSM(snapped) - GSM(exact fit)||_F


def _snap(x, step):
    return np.round(np.asarray(x, dtype=float) / step) * step


def fit_toy_element(target: RealizationTarget, lambda_step: float = 0.1, angle_step_deg: float = 1.0,
                    tol: float = 1e-3) -> ToyFit:
    """Fit the toy element to a realization target and report the snapping residual."""
    q = np.asarray(target.q, dtype=complex)
    if q.shape != (2, 2):
        raise DimensionError("the toy element has exactly two modes")
    lam = np.asarray(target.lambdas)
    if np.max(np.abs(np.imag(lam))) > 1e-8 or not np.all(np.isfinite(lam)):
        raise FitInfeasibleError("target eigenvalues are not finite real numbers")
    lam = np.real(lam).astype(float)
    # column signs are free: turn a reflection into a rotation first
    flip = np.array([1.0, -1.0 if np.linalg.det(q.real) < 0 else 1.0])
    qr = q.real * flip[None, :]
    if qr[0, 0] == 0:
        phi = -90.0
    else:
        phi = float(-np.degrees(np.arctan(qr[0, 1] / qr[0, 0])))
    rot = rotation(phi)
    signs = flip * np.where(np.real(np.diag(rot.T @ qr)) < 0, -1.0, 1.0)
    deviation = float(np.linalg.norm(q * signs[None, :] - rot))
    if deviation > tol:
        raise FitInfeasibleError(f"Q deviates from a real rotation by {deviation:.3g}")
    t = np.asarray(target.t_eig, dtype=complex) * signs[:, None]
    exact = ToyElement(phi, lam, t, np.asarray(target.gamma))
    snapped = exact.with_lambdas(_snap(lam, lambda_step))
    snapped = ToyElement(float(_snap(phi, angle_step_deg)), snapped.lambdas, snapped.t_eig, snapped.gamma)
    goal = target.gsm().entries
    g_exact = exact.gsm(target.gamma_l).entries
    g_snap = snapped.gsm(target.gamma_l).entries
    residual = float(np.linalg.norm(g_exact - goal))
    residual_snapped = float(np.linalg.norm(g_snap - goal))
    bound = residual + float(np.linalg.norm(g_snap - g_exact))
    return ToyFit(exact, snapped, deviation, residual, residual_snapped, bound)


def write_chi_sweep_csv(sweep: ChiSweep, path) -> None:
    n = sweep.lambdas.shape[1]
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["chi_deg"] + [f"lambda{i + 1}" for i in range(n)] + [f"|t{i + 1}|" for i in range(n)])
        for chi, lam, t in zip(sweep.chi_deg, sweep.lambdas, sweep.t_abs):
            wr.writerow([f"{chi:g}"] + [repr(float(v)) for v in lam] + [repr(float(v)) for v in t])


def write_realization_report(path, rows: Sequence[dict]) -> None:
    """Structured text, one block per element class."""
    out = []
    for row in rows:
        out.append(f"[class {row['class']}]")
        for k, v in row.items():
            if k == "class":
                continue
            out.append(f"{k} = {v:.9g}" if isinstance(v, float) else f"{k} = {v}")
        out.append("")
    Path(path).write_text("\n".join(out))
