"""Far fields, the multi-beam penalty cost and pattern metrics.

Far-field samples are complex 2-vectors ``(E_theta, E_phi)`` normalized so
that a single mode radiates unit power: ``int |F|^2 dOmega = 1``. Phasors use
the ``exp(+j w t)`` convention.

Polarization projections are plain (non-conjugated) row-vector products
``u . F``. With ``LHCP = (1, -j)/sqrt(2)`` the co-polar field of a left-hand
wave is ``u_D . F``; flip :data:`LHCP`/:data:`RHCP` to change handedness.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal.windows import chebwin

from .errors import DimensionError, DomainError, MetricUndefinedError, MissingSampleError

__all__ = [
    "LHCP",
    "RHCP",
    "ZERO_BEAM_EPS",
    "SENTINEL_COST",
    "ModalFarFieldSet",
    "SphereFields",
    "BeamSpec",
    "Metrics",
    "ChebyshevBaseline",
    "far_field",
    "penalty_gamma",
    "beam_cost",
    "total_cost",
    "metrics",
    "directivity_dbi",
    "chebyshev_baseline",
    "max_sidelobe_db",
    "sidelobe_set",
    "xpol_set",
    "standard_beam_table",
    "scan_beam_table",
    "write_pattern_cut",
    "write_metrics_report",
]

LHCP = np.array([1.0, -1.0j]) / np.sqrt(2.0)
RHCP = np.array([1.0, 1.0j]) / np.sqrt(2.0)

ZERO_BEAM_EPS = 1e-30
SENTINEL_COST = 1e30


def _angle_key(theta: float, phi: float) -> tuple[int, int]:
    return (int(round(theta * 1e6)), int(round(phi * 1e6)))


@dataclass(frozen=True)
class ModalFarFieldSet:
    """Sampled modal far fields ``samples[k, n, i, :]`` on ``angles[i] = (theta, phi)`` in degrees."""

    angles: np.ndarray
    samples: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ang = np.array(self.angles, dtype=float).reshape(-1, 2)
        smp = np.array(self.samples, dtype=complex)
        if smp.ndim != 4 or smp.shape[2] != ang.shape[0] or smp.shape[3] != 2:
            raise DimensionError(f"samples shape {smp.shape} incompatible with {ang.shape[0]} angles")
        if not np.all(np.isfinite(smp)):
            raise DimensionError("far-field samples must be finite")
        ang.setflags(write=False)
        smp.setflags(write=False)
        object.__setattr__(self, "angles", ang)
        object.__setattr__(self, "samples", smp)
        object.__setattr__(self, "_index", {_angle_key(t, p): i for i, (t, p) in enumerate(ang)})

    @property
    def n_elements(self) -> int:
        return self.samples.shape[0]

    @property
    def n_modes(self) -> int:
        return self.samples.shape[1]

    def indices(self, angles: Iterable) -> np.ndarray:
        """Grid indices of ``angles`` (sequence of ``(theta, phi)``)."""
        out = []
        for t, p in np.asarray(list(angles), dtype=float).reshape(-1, 2):
            try:
                out.append(self._index[_angle_key(t, p)])
            except KeyError:
                raise MissingSampleError(f"angle ({t:g}, {p:g}) not in far-field grid") from None
        return np.array(out, dtype=int)

    def flat(self, idx=None) -> np.ndarray:
        """Samples as ``(KN, A, 2)``, optionally restricted to grid indices."""
        K, N, A, _ = self.samples.shape
        s = self.samples.reshape(K * N, A, 2)
        return s if idx is None else s[:, idx, :]

    def projection(self, u: np.ndarray, idx=None) -> np.ndarray:
        """Rows ``c(xi)`` with ``u . F(xi) = c(xi) @ f``, shape ``(A, KN)``."""
        return np.einsum("p,iap->ai", np.asarray(u, dtype=complex), self.flat(idx))


@dataclass(frozen=True)
class SphereFields:
    """Full-sphere samples for power quadrature.

    Factored form: ``samples`` of shape ``(N, T, P, 2)`` for a reference element
    at the origin plus ``positions`` ``(K, 3)`` in wavelengths; element ``k``
    adds the phase ``exp(+j 2 pi r_hat . r_k)``. Explicit form: ``samples`` of
    shape ``(K, N, T, P, 2)`` and no positions.
    """

    theta_deg: np.ndarray
    phi_deg: np.ndarray
    samples: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        th = np.asarray(self.theta_deg, dtype=float)
        ph = np.asarray(self.phi_deg, dtype=float)
        s = np.asarray(self.samples, dtype=complex)
        shape = (th.size, ph.size, 2)
        if self.positions is None:
            if s.ndim != 5 or s.shape[2:] != shape:
                raise DimensionError(f"explicit sphere samples must be (K, N, {th.size}, {ph.size}, 2)")
        else:
            if s.ndim != 4 or s.shape[1:] != shape:
                raise DimensionError(f"factored sphere samples must be (N, {th.size}, {ph.size}, 2)")
            object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "theta_deg", th)
        object.__setattr__(self, "phi_deg", ph)
        object.__setattr__(self, "samples", s)

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0] if self.positions is not None else self.samples.shape[0]

    def weights(self) -> np.ndarray:
        """Quadrature weights ``sin(theta) dtheta dphi`` (trapezoid in theta) on the grid."""
        th = np.radians(self.theta_deg)
        dth = np.gradient(th) if th.size > 1 else np.array([np.pi])
        if th.size > 1:
            dth = np.diff(th)
            wt = np.zeros_like(th)
            wt[:-1] += dth / 2
            wt[1:] += dth / 2
        else:
            wt = dth
        dph = 2 * np.pi / self.phi_deg.size
        return np.outer(np.sin(th) * wt, np.full(self.phi_deg.size, dph))

    def field(self, f: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Array far field on the sphere for one coefficient vector ``f`` (length KN)."""
        f = np.asarray(f, dtype=complex).ravel()
        T, P = self.theta_deg.size, self.phi_deg.size
        if self.positions is None:
            K, N = self.samples.shape[:2]
            return np.einsum("knabp,kn->abp", self.samples, f.reshape(K, N))
        K = self.positions.shape[0]
        N = self.samples.shape[0]
        fk = f.reshape(K, N)
        th = np.radians(self.theta_deg)[:, None]
        ph = np.radians(self.phi_deg)[None, :]
        rhat = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph),
                         np.broadcast_to(np.cos(th), (T, P))], axis=-1).reshape(-1, 3)
        ref = self.samples.reshape(N, T * P, 2)
        out = np.empty((T * P, 2), dtype=complex)
        for i0 in range(0, T * P, chunk):
            sl = slice(i0, i0 + chunk)
            phase = np.exp(2j * np.pi * rhat[sl] @ self.positions.T)  # (chunk, K)
            af = phase @ fk  # (chunk, N)
            out[sl] = np.einsum("an,nap->ap", af, ref[:, sl, :])
        return out.reshape(T, P, 2)

    def radiated_power(self, f: np.ndarray) -> float:
        F = self.field(f)
        return float(np.sum(self.weights()[..., None] * np.abs(F) ** 2))


@dataclass(frozen=True)
class BeamSpec:
    """Target direction, polarizations, SLL/XPR targets (dB) and sample sets (degrees)."""

    target: tuple[float, float]
    sll_db: float
    xpr_db: float
    sidelobe_angles: np.ndarray
    xpol_angles: np.ndarray
    u_d: np.ndarray = field(default_factory=lambda: LHCP.copy())
    u_x: np.ndarray = field(default_factory=lambda: RHCP.copy())

    def __post_init__(self):
        object.__setattr__(self, "target", (float(self.target[0]), float(self.target[1])))
        ud = np.asarray(self.u_d, dtype=complex)
        ux = np.asarray(self.u_x, dtype=complex)
        if abs(np.linalg.norm(ud) - 1) > 1e-12 or abs(np.linalg.norm(ux) - 1) > 1e-12 or abs(np.vdot(ud, ux)) > 1e-12:
            raise DomainError("u_D and u_X must be orthonormal")
        if self.sll_db >= 0 or self.xpr_db >= 0:
            raise DomainError("SLL and XPR targets must be negative dB values")
        ms = np.asarray(self.sidelobe_angles, dtype=float).reshape(-1, 2)
        mx = np.asarray(self.xpol_angles, dtype=float).reshape(-1, 2)
        tk = _angle_key(*self.target)
        if any(_angle_key(t, p) == tk for t, p in ms):
            raise DomainError(f"target {self.target} lies inside its own sidelobe set")
        object.__setattr__(self, "u_d", ud)
        object.__setattr__(self, "u_x", ux)
        object.__setattr__(self, "sidelobe_angles", ms)
        object.__setattr__(self, "xpol_angles", mx)

    @property
    def sll_lin(self) -> float:
        return 10 ** (self.sll_db / 20)

    @property
    def xpr_lin(self) -> float:
        return 10 ** (self.xpr_db / 20)


def far_field(f: np.ndarray, fields: ModalFarFieldSet, angles=None) -> np.ndarray:
    """Far fields of all states, shape ``(S, A, 2)``; ``A`` is the grid or the requested angles."""
    f = np.asarray(f, dtype=complex)
    if f.ndim == 1:
        f = f[:, None]
    K, N = fields.n_elements, fields.n_modes
    if f.shape[0] != K * N:
        raise DimensionError(f"f has {f.shape[0]} rows, expected KN={K * N}")
    idx = None if angles is None else fields.indices(angles)
    return np.einsum("iap,is->sap", fields.flat(idx), f)


def penalty_gamma(x):
    """Dead-zone linear penalty: 0 for ``x <= 1``, ``x - 1`` above."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("penalty argument must be nonnegative")
    out = np.maximum(arr - 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def _sample(F: np.ndarray, grid_index: dict, angles: np.ndarray) -> np.ndarray:
    try:
        idx = [grid_index[_angle_key(t, p)] for t, p in angles]
    except KeyError as exc:
        raise MissingSampleError(f"far field lacks sample {exc}") from None
    return F[np.asarray(idx, dtype=int)]


def beam_cost(F: np.ndarray, sigma: BeamSpec, alpha: float, angles) -> float:
    """Single-beam cost of far field ``F`` (shape ``(A, 2)`` on ``angles``)."""
    F = np.asarray(F, dtype=complex).reshape(-1, 2)
    ang = np.asarray(angles, dtype=float).reshape(-1, 2)
    if ang.shape[0] != F.shape[0]:
        raise DimensionError("far field and angle list lengths differ")
    grid = {_angle_key(t, p): i for i, (t, p) in enumerate(ang)}
    main = abs(sigma.u_d @ _sample(F, grid, [sigma.target])[0])
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    if alpha == 0:
        return -main ** 2
    if main < ZERO_BEAM_EPS:
        return SENTINEL_COST
    side = np.abs(_sample(F, grid, sigma.sidelobe_angles) @ sigma.u_d) / (main * sigma.sll_lin)
    xpol = np.abs(_sample(F, grid, sigma.xpol_angles) @ sigma.u_x) / (main * sigma.xpr_lin)
    pen = np.sum(penalty_gamma(side) ** 2) + np.sum(penalty_gamma(xpol) ** 2)
    return -main ** 2 + alpha * pen


def total_cost(F_all: Sequence[np.ndarray], beams: Sequence[BeamSpec], alpha: float, angles) -> float:
    """Sum of per-beam costs, state ``s`` against beam ``s`` (fixed summation order)."""
    if len(F_all) != len(beams):
        raise DimensionError(f"{len(F_all)} far fields for {len(beams)} beams")
    total = 0.0
    for F, sigma in zip(F_all, beams):
        total += beam_cost(F, sigma, alpha, angles)
    return total


@dataclass(frozen=True)
class Metrics:
    directivity_dbi: float
    sll_db: float
    xpr_db: float

    def passes(self, sigma: BeamSpec, tol_db: float = 0.0) -> bool:
        return self.sll_db <= sigma.sll_db + tol_db and self.xpr_db <= sigma.xpr_db + tol_db


def directivity_dbi(main_field: complex | np.ndarray, radiated_power: float, u=None) -> float:
    """``10 log10(4 pi |u . F|^2 / P_rad)``; total directivity when ``u`` is None."""
    F = np.asarray(main_field, dtype=complex)
    num = np.sum(np.abs(F) ** 2) if u is None else abs(np.asarray(u) @ F) ** 2
    return float(10 * np.log10(4 * np.pi * num / radiated_power))


def metrics(f: np.ndarray, sigma: BeamSpec, fields: ModalFarFieldSet, sphere: SphereFields | None = None) -> Metrics:
    """Co-polar directivity, achieved SLL and XPR of one excitation state."""
    f = np.asarray(f, dtype=complex).ravel()
    Ft = far_field(f, fields, [sigma.target])[0, 0]
    main = abs(sigma.u_d @ Ft)
    if main < ZERO_BEAM_EPS:
        raise MetricUndefinedError("main-beam field is zero")
    Fs = far_field(f, fields, sigma.sidelobe_angles)[0]
    Fx = far_field(f, fields, sigma.xpol_angles)[0]
    with np.errstate(divide="ignore"):
        sll = 20 * np.log10(np.max(np.abs(Fs @ sigma.u_d)) / main) if len(Fs) else -np.inf
        xpr = 20 * np.log10(np.max(np.abs(Fx @ sigma.u_x)) / main) if len(Fx) else -np.inf
    d = np.nan
    if sphere is not None:
        d = directivity_dbi(Ft, sphere.radiated_power(f), sigma.u_d)
    return Metrics(float(d), float(sll), float(xpr))


@dataclass(frozen=True)
class ChebyshevBaseline:
    """Linear array weights with a uniform element spacing (wavelengths)."""

    weights: np.ndarray
    spacing: float

    def array_factor(self, theta_deg) -> np.ndarray:
        u = np.sin(np.radians(np.asarray(theta_deg, dtype=float)))
        n = np.arange(self.weights.size)
        return np.exp(2j * np.pi * self.spacing * np.outer(u, n)) @ self.weights

    def max_sidelobe_db(self, step_deg: float = 0.1) -> float:
        theta = np.arange(-90.0, 90.0 + step_deg / 2, step_deg)
        return max_sidelobe_db(np.abs(self.array_factor(theta)))


def chebyshev_baseline(n_elements: int, sll_db: float, spacing_wavelengths: float = 0.5,
                       steer_deg: float = 0.0, taper: bool = True) -> ChebyshevBaseline:
    """Dolph-Chebyshev amplitude taper with a linear steering phase.

    ``taper=False`` returns uniform weights with the same steering.
    """
    if n_elements < 2:
        raise DomainError("need at least two elements")
    if sll_db >= 0:
        raise DomainError("sidelobe level must be negative dB")
    if taper:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            amp = chebwin(n_elements, at=-sll_db)
        amp = amp / amp.max()
    else:
        amp = np.ones(n_elements)
    n = np.arange(n_elements)
    phase = np.exp(-2j * np.pi * spacing_wavelengths * n * np.sin(np.radians(steer_deg)))
    return ChebyshevBaseline(amp * phase, float(spacing_wavelengths))


def _main_lobe(mag: np.ndarray) -> tuple[int, int, int]:
    i = int(np.argmax(mag))
    lo = i
    while lo > 0 and mag[lo - 1] <= mag[lo]:
        lo -= 1
    hi = i
    while hi < mag.size - 1 and mag[hi + 1] <= mag[hi]:
        hi += 1
    return i, lo, hi


def max_sidelobe_db(mag: np.ndarray) -> float:
    """Largest level outside the main lobe (bounded by the first minima), dB re peak."""
    mag = np.asarray(mag, dtype=float)
    i, lo, hi = _main_lobe(mag)
    outside = np.concatenate([mag[:lo], mag[hi + 1 :]])
    if outside.size == 0:
        return -np.inf
    return float(20 * np.log10(outside.max() / mag[i]))


def sidelobe_set(theta_a: float, theta_b: float, phi: float = 0.0) -> np.ndarray:
    """Integer-degree cut angles with ``theta <= theta_a`` or ``theta >= theta_b``."""
    th = np.arange(-90, 91)
    th = th[(th <= theta_a) | (th >= theta_b)]
    return np.column_stack([th, np.full(th.size, phi)]).astype(float)


def xpol_set(phi: float = 0.0) -> np.ndarray:
    """All integer-degree cut angles from -90 to 90."""
    th = np.arange(-90, 91)
    return np.column_stack([th, np.full(th.size, phi)]).astype(float)


STANDARD_BANDS = (
    (-60, -90, -25), (-50, -75, -30), (-40, -60, -25), (-30, -50, -15), (-20, -35, -5),
    (-10, -25, 5), (0, -15, 15), (10, -5, 25), (20, 5, 35), (30, 15, 50),
    (40, 25, 60), (50, 30, 75), (60, 25, 90),
)


def standard_beam_table(sll_db: float = -15.0, xpr_db: float = -30.0) -> list[BeamSpec]:
    """The 13-beam scan table of the 8x8 example (scan plane phi = 0)."""
    mx = xpol_set()
    return [BeamSpec((t, 0.0), sll_db, xpr_db, sidelobe_set(a, b), mx) for t, a, b in STANDARD_BANDS]


def scan_beam_table(thetas: Sequence[float], n_columns: int, sll_db: float = -15.0,
                    xpr_db: float = -30.0, spacing: float = 0.5) -> list[BeamSpec]:
    """Beam table for an arbitrary column count.

    The main-beam exclusion band of each beam spans the first nulls of a
    Chebyshev baseline with the same column count, steered to the target and
    rounded outward to integer degrees.
    """
    beams = []
    theta = np.arange(-90.0, 90.05, 0.1)
    for t in thetas:
        base = chebyshev_baseline(n_columns, sll_db, spacing, t)
        _, lo, hi = _main_lobe(np.abs(base.array_factor(theta)))
        a = int(np.floor(theta[lo] + 1e-9)) - 1
        b = int(np.ceil(theta[hi] - 1e-9)) + 1
        a, b = min(a, int(np.floor(t)) - 1), max(b, int(np.ceil(t)) + 1)
        beams.append(BeamSpec((t, 0.0), sll_db, xpr_db, sidelobe_set(a, b), xpol_set()))
    return beams


def write_pattern_cut(path, theta_phi: np.ndarray, F: np.ndarray, sigma: BeamSpec) -> None:
    """CSV ``theta_deg, phi_deg, co_dB, cross_dB`` normalized to the co-polar peak of the cut."""
    F = np.asarray(F, dtype=complex).reshape(-1, 2)
    co = np.abs(F @ sigma.u_d)
    cx = np.abs(F @ sigma.u_x)
    ref = max(co.max(), ZERO_BEAM_EPS)
    with np.errstate(divide="ignore"):
        co_db = 20 * np.log10(co / ref)
        cx_db = 20 * np.log10(cx / ref)
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["theta_deg", "phi_deg", "co_dB", "cross_dB"])
        for (t, p), c, x in zip(theta_phi, co_db, cx_db):
            wr.writerow([f"{t:g}", f"{p:g}", f"{c:.6f}", f"{x:.6f}"])


def write_metrics_report(path, rows: Sequence[dict]) -> None:
    """Key/value text report, one block per beam."""
    lines = []
    for row in rows:
        lines.append(f"[beam {row['beam']}]")
        for k, v in row.items():
            if k == "beam":
                continue
            lines.append(f"{k} = {v:.6f}" if isinstance(v, float) else f"{k} = {v}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
