"""Coupled GSM solve of the whole array.

Every element obeys ``f_k = (S_k - I) a_k + T_k v_k`` and
``w_k = R_k a_k + Gamma_k v_k``; the incident modal waves come only from the
other elements, ``a = G f``. Eliminating ``a`` gives the dense system

    (I - (Sbar - I) G) f = Tbar v

with block-diagonal ``Sbar`` and ``Tbar``. It is factored once (LU) and the
factorization is reused for all excitation states and for the adjoint solve.

Element index ``k`` runs column-major over the grid: ``k = col * rows + row``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import AssignmentError, DimensionError, InvalidInputError, ResonanceError
from .manifolds import Gsm

__all__ = [
    "CouplingMatrix",
    "DofAssignment",
    "CoupledSolution",
    "CoupledSystem",
    "assemble_element_gsms",
    "solve_coupled",
    "apply_phase_shift",
    "shift_elements",
]

RCOND_MIN = 1e-12


@dataclass(frozen=True)
class CouplingMatrix:
    """Global modal coupling matrix with ``K x K`` blocks of size ``N x N``."""

    matrix: np.ndarray
    n_elements: int
    n_modes: int

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        kn = self.n_elements * self.n_modes
        if m.shape != (kn, kn):
            raise DimensionError(f"coupling matrix shape {m.shape} != ({kn}, {kn})")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def zeros(cls, n_elements: int, n_modes: int) -> "CouplingMatrix":
        kn = n_elements * n_modes
        return cls(np.zeros((kn, kn), dtype=complex), n_elements, n_modes)

    def blocks(self) -> np.ndarray:
        """View as ``(K, K, N, N)``."""
        K, N = self.n_elements, self.n_modes
        return self.matrix.reshape(K, N, K, N).transpose(0, 2, 1, 3)

    def block(self, k: int, l: int) -> np.ndarray:
        N = self.n_modes
        return self.matrix[k * N : (k + 1) * N, l * N : (l + 1) * N]

    def diagonal_max(self) -> float:
        b = self.blocks()
        idx = np.arange(self.n_elements)
        return float(np.max(np.abs(b[idx, idx]))) if self.n_elements else 0.0

    def reciprocity_error(self) -> float:
        """``max |G(l,k) - G(k,l)^T|`` over all block pairs; equals ``max|G - G^T|``."""
        return float(np.max(np.abs(self.matrix - self.matrix.T))) if self.matrix.size else 0.0


@dataclass(frozen=True)
class DofAssignment:
    """Maps each element to a DOF class.

    ``class_of`` holds zero-based class indices; ``labels`` gives the one-based
    numbering used in figures and reports.
    """

    class_of: np.ndarray
    rows: int
    cols: int
    strategy: str = "custom"

    def __post_init__(self):
        c = np.array(self.class_of, dtype=int)
        if c.ndim != 1 or c.size != self.rows * self.cols:
            raise DimensionError(f"class_of has {c.size} entries for a {self.rows}x{self.cols} grid")
        if c.size and (c.min() < 0 or set(np.unique(c)) != set(range(c.max() + 1))):
            raise AssignmentError("class indices must cover 0..D-1 without gaps")
        c.setflags(write=False)
        object.__setattr__(self, "class_of", c)

    @property
    def n_elements(self) -> int:
        return self.class_of.size

    @property
    def n_classes(self) -> int:
        return int(self.class_of.max()) + 1 if self.class_of.size else 0

    @property
    def labels(self) -> np.ndarray:
        return self.class_of + 1

    def grid(self) -> np.ndarray:
        """Labels arranged as ``grid[row, col]``."""
        return self.labels.reshape(self.cols, self.rows).T

    def members(self, d: int) -> np.ndarray:
        return np.flatnonzero(self.class_of == d)


@dataclass(frozen=True)
class CoupledSolution:
    f: np.ndarray
    a: np.ndarray
    w: np.ndarray


def assemble_element_gsms(assignment: DofAssignment, class_gsms: Sequence[Gsm]) -> list[Gsm]:
    """Give every element the GSM of its class."""
    D = len(class_gsms)
    if assignment.n_classes > D:
        raise AssignmentError(f"assignment references class {assignment.n_classes} but only {D} GSMs given")
    return [class_gsms[d] for d in assignment.class_of]


def _stack_blocks(element_gsms: Sequence[Gsm]):
    if not element_gsms:
        raise DimensionError("no element GSMs")
    N = element_gsms[0].n_modes
    P = element_gsms[0].n_ports
    for g in element_gsms:
        if g.n_modes != N or g.n_ports != P:
            raise DimensionError("all elements must share N and P")
    psi = np.stack([g.entries for g in element_gsms])
    if not np.all(np.isfinite(psi)):
        raise InvalidInputError("non-finite GSM entries")
    return psi, N, P


class CoupledSystem:
    """Factored coupled system for fixed element GSMs and coupling.

    The LU factorization is immutable after construction and can serve any
    number of right-hand sides, including transposed (adjoint) solves.
    """

    def __init__(self, element_gsms: Sequence[Gsm], G: CouplingMatrix):
        psi, N, P = _stack_blocks(element_gsms)
        K = psi.shape[0]
        if G.n_elements != K or G.n_modes != N:
            raise DimensionError(f"coupling is for K={G.n_elements}, N={G.n_modes}; GSMs give K={K}, N={N}")
        if not np.all(np.isfinite(G.matrix)):
            raise InvalidInputError("non-finite coupling entries")
        self.K, self.N, self.P = K, N, P
        self.psi = psi
        self.S = psi[:, :N, :N]
        self.T = psi[:, :N, N:]
        self.R = psi[:, N:, :N]
        self.Gamma = psi[:, N:, N:]
        self.G = G.matrix
        KN = K * N
        # (Sbar - I) G, one block row at a time
        sm = self.S - np.eye(N)
        coupled = np.einsum("kij,kjm->kim", sm, self.G.reshape(K, N, KN)).reshape(KN, KN)
        system = np.eye(KN) - coupled
        anorm = np.linalg.norm(system, 1)
        self.lu = sla.lu_factor(system, check_finite=False)
        (zgecon,) = sla.lapack.get_lapack_funcs(("gecon",), (system,))
        rcond, _ = zgecon(self.lu[0], anorm, norm="1")
        self.rcond = float(rcond)
        if not self.rcond >= RCOND_MIN:
            raise ResonanceError(f"coupled system is singular (rcond={self.rcond:.3g})")

    def _check_v(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=complex)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.K * self.P:
            raise DimensionError(f"port waves have {v.shape[0]} rows, expected K*P={self.K * self.P}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("non-finite port waves")
        return v

    def apply_T(self, v: np.ndarray) -> np.ndarray:
        vb = v.reshape(self.K, self.P, -1)
        return np.einsum("kij,kjs->kis", self.T, vb).reshape(self.K * self.N, -1)

    def solve(self, v) -> CoupledSolution:
        v = self._check_v(v)
        f = sla.lu_solve(self.lu, self.apply_T(v), check_finite=False)
        a = self.G @ f
        ab = a.reshape(self.K, self.N, -1)
        vb = v.reshape(self.K, self.P, -1)
        w = (np.einsum("kij,kjs->kis", self.R, ab) + np.einsum("kij,kjs->kis", self.Gamma, vb))
        return CoupledSolution(f=f, a=a, w=w.reshape(self.K * self.P, -1))

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``M^H x = rhs`` with the stored factorization."""
        return sla.lu_solve(self.lu, rhs, trans=2, check_finite=False)


def solve_coupled(element_gsms: Sequence[Gsm], G: CouplingMatrix, v) -> CoupledSolution:
    """Outgoing modal coefficients ``f``, incident ``a`` and port waves ``w`` for all states."""
    return CoupledSystem(element_gsms, G).solve(v)


def apply_phase_shift(gsm: Gsm, v_block, chi: float):
    """Shift the port reference plane of one element by ``chi`` radians.

    Returns the shifted GSM and the compensated port waves; the outgoing modal
    coefficients of any coupled solve are unchanged by this transformation.
    """
    e = np.exp(1j * chi)
    N = gsm.n_modes
    m = gsm.entries.copy()
    m[:N, N:] *= e
    m[N:, :N] *= e
    m[N:, N:] *= e * e
    v = None if v_block is None else np.asarray(v_block, dtype=complex) * np.conj(e)
    return Gsm(m, N), v


def shift_elements(element_gsms: Sequence[Gsm], v, chis) -> tuple[list[Gsm], np.ndarray]:
    """Apply per-element reference-plane shifts to a whole array."""
    chis = np.broadcast_to(np.asarray(chis, dtype=float), (len(element_gsms),))
    P = element_gsms[0].n_ports
    v = np.asarray(v, dtype=complex)
    v2 = v.reshape(len(element_gsms), P, -1).copy()
    out = []
    for k, (g, chi) in enumerate(zip(element_gsms, chis)):
        g2, v2[k] = apply_phase_shift(g, v2[k], chi)
        out.append(g2)
    return out, v2.reshape(v.shape)
