"""Manifolds of the design variables.

Points of the unitary-symmetric manifold are stored as full complex matrices.
The metric everywhere is the real Frobenius inner product ``Re tr(A^H B)``.

At a point ``Psi = U U^T`` the tangent space is ``{U (iS) U^T : S real symmetric}``,
which is the same set as the symmetric matrices ``V`` with ``Psi^H V``
skew-Hermitian. Orthogonal projection of an ambient ``Z`` onto it has the
closed form ``P(Z) = (Z_s - Psi Z_s^H Psi) / 2`` with ``Z_s = (Z + Z^T) / 2``.
The retraction symmetrizes ``Psi + tV`` and replaces it by its unitary polar
factor, i.e. the complex-symmetric SVD with the singular values snapped to one.

Excitations live on a product of complex unit spheres: every column of the
static part and every column of the dynamic part has unit 2-norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateColumnError, DimensionError, DomainError, RetractionError

__all__ = [
    "Gsm",
    "ExcitationSet",
    "DesignPoint",
    "TangentVector",
    "inner",
    "us_random",
    "us_project_tangent",
    "us_retract",
    "us_residuals",
    "excitation_project_tangent",
    "excitation_retract",
    "riemannian_gradient",
    "retract",
]


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, Gsm):
        return x.entries
    return np.asarray(x, dtype=complex)


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Real Frobenius inner product ``Re tr(a^H b)``."""
    return float(np.real(np.vdot(a, b)))


@dataclass(frozen=True)
class Gsm:
    """Generalized scattering matrix of one element.

    ``entries`` is the ``(N+P) x (N+P)`` block matrix ``[[S, T], [R, Gamma]]``
    mapping incident modal/port waves to outgoing ones.
    """

    entries: np.ndarray
    n_modes: int

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"GSM must be square, got shape {m.shape}")
        if not 0 <= self.n_modes <= m.shape[0]:
            raise DimensionError(f"n_modes={self.n_modes} incompatible with size {m.shape[0]}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def n_ports(self) -> int:
        return self.entries.shape[0] - self.n_modes

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def S(self) -> np.ndarray:
        return self.entries[: self.n_modes, : self.n_modes]

    @property
    def T(self) -> np.ndarray:
        return self.entries[: self.n_modes, self.n_modes :]

    @property
    def R(self) -> np.ndarray:
        return self.entries[self.n_modes :, : self.n_modes]

    @property
    def Gamma(self) -> np.ndarray:
        return self.entries[self.n_modes :, self.n_modes :]

    @classmethod
    def from_blocks(cls, S, T, R, Gamma) -> "Gsm":
        S, T, R, Gamma = (np.atleast_2d(np.asarray(b, dtype=complex)) for b in (S, T, R, Gamma))
        return cls(np.block([[S, T], [R, Gamma]]), S.shape[0])

    def residuals(self) -> tuple[float, float]:
        """Return ``(||Psi^H Psi - I||_F, ||Psi - Psi^T||_F)``."""
        return us_residuals(self.entries)

    def is_valid(self, tol: float = 1e-10) -> bool:
        return max(self.residuals()) <= tol


def us_residuals(psi) -> tuple[float, float]:
    m = _as_matrix(psi)
    unit = np.linalg.norm(m.conj().T @ m - np.eye(m.shape[0]))
    sym = np.linalg.norm(m - m.T)
    return float(unit), float(sym)


def _haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def us_random(n: int, seed: int | np.random.Generator | None = None, n_modes: int | None = None) -> Gsm:
    """Draw a random unitary symmetric matrix ``U U^T`` with Haar-distributed ``U``.

    ``n_modes`` only controls how the returned :class:`Gsm` is partitioned; it
    defaults to ``n - 1`` (one port) for ``n > 1``.
    """
    if n < 1:
        raise DomainError(f"matrix dimension must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = _haar_unitary(n, rng)
    psi = u @ u.T
    psi = 0.5 * (psi + psi.T)
    if n_modes is None:
        n_modes = n - 1 if n > 1 else 1
    return Gsm(psi, n_modes)


def us_project_tangent(base, ambient) -> np.ndarray:
    """Orthogonal projection of ``ambient`` onto the tangent space at ``base``."""
    psi = _as_matrix(base)
    z = np.asarray(ambient, dtype=complex)
    if z.shape != psi.shape:
        raise DimensionError(f"ambient shape {z.shape} does not match base {psi.shape}")
    zs = 0.5 * (z + z.T)
    return 0.5 * (zs - psi @ zs.conj().T @ psi)


def us_retract(base, direction, step: float = 1.0) -> np.ndarray:
    """Polar retraction of ``base + step * direction`` onto the manifold."""
    psi = _as_matrix(base)
    if step == 0:
        return psi.copy()
    v = np.asarray(direction, dtype=complex)
    if v.shape != psi.shape:
        raise DimensionError(f"direction shape {v.shape} does not match base {psi.shape}")
    y = psi + step * v
    y = 0.5 * (y + y.T)
    try:
        u, _, vh = np.linalg.svd(y)
    except np.linalg.LinAlgError as exc:
        raise RetractionError(f"SVD did not converge: {exc}") from exc
    q = u @ vh
    return 0.5 * (q + q.T)


@dataclass(frozen=True)
class ExcitationSet:
    """Factored port excitation ``v = blockdiag(static) @ dynamic``.

    ``static`` has shape ``(R*P, C)``: column ``c`` feeds the ``R`` elements
    (``P`` ports each) of array column ``c``. ``dynamic`` has shape ``(C, S)``,
    one column of column weights per excitation state.
    """

    static: np.ndarray
    dynamic: np.ndarray

    def __post_init__(self):
        st = np.array(self.static, dtype=complex)
        dy = np.array(self.dynamic, dtype=complex)
        if st.ndim != 2 or dy.ndim != 2 or st.shape[1] != dy.shape[0]:
            raise DimensionError(f"static {st.shape} and dynamic {dy.shape} do not chain")
        st.setflags(write=False)
        dy.setflags(write=False)
        object.__setattr__(self, "static", st)
        object.__setattr__(self, "dynamic", dy)

    @property
    def layout(self) -> tuple[int, int, int]:
        """``(rows*ports, columns, states)``."""
        return self.static.shape[0], self.static.shape[1], self.dynamic.shape[1]

    @classmethod
    def uniform(cls, rows: int, cols: int, states: int, ports: int = 1) -> "ExcitationSet":
        """Equal amplitude, zero phase everywhere."""
        m = rows * ports
        return cls(np.full((m, cols), 1 / np.sqrt(m), dtype=complex),
                   np.full((cols, states), 1 / np.sqrt(cols), dtype=complex))

    def block_static(self) -> np.ndarray:
        """The ``(C*R*P) x C`` block-diagonal static matrix."""
        m, c = self.static.shape
        out = np.zeros((m * c, c), dtype=complex)
        for j in range(c):
            out[j * m : (j + 1) * m, j] = self.static[:, j]
        return out

    def port_waves(self) -> np.ndarray:
        """Incident port waves, shape ``(K*P, S)`` in column-major element order."""
        m, c = self.static.shape
        return (self.static[:, :, None] * self.dynamic[None, :, :]).transpose(1, 0, 2).reshape(m * c, -1)

    def residuals(self) -> tuple[float, float]:
        """Worst deviation from unit norm over static and dynamic columns."""
        return (float(np.max(np.abs(np.linalg.norm(self.static, axis=0) - 1))),
                float(np.max(np.abs(np.linalg.norm(self.dynamic, axis=0) - 1))))


def _project_columns(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    return z - np.real(np.sum(x.conj() * z, axis=0)) * x


def _normalize_columns(y: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(y, axis=0)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        bad = np.flatnonzero((norms == 0) | ~np.isfinite(norms))
        raise DegenerateColumnError(f"{what} column(s) {bad.tolist()} degenerate after step")
    return y / norms


def excitation_project_tangent(base: ExcitationSet, static, dynamic) -> tuple[np.ndarray, np.ndarray]:
    st = np.asarray(static, dtype=complex)
    dy = np.asarray(dynamic, dtype=complex)
    if st.shape != base.static.shape or dy.shape != base.dynamic.shape:
        raise DimensionError("excitation direction shape mismatch")
    return _project_columns(base.static, st), _project_columns(base.dynamic, dy)


def excitation_retract(base: ExcitationSet, direction, step: float = 1.0) -> ExcitationSet:
    """Step along ``direction = (d_static, d_dynamic)`` and renormalize every column."""
    d_st, d_dy = direction
    d_st = np.asarray(d_st, dtype=complex)
    d_dy = np.asarray(d_dy, dtype=complex)
    if d_st.shape != base.static.shape or d_dy.shape != base.dynamic.shape:
        raise DimensionError("excitation direction shape mismatch")
    if step == 0:
        return ExcitationSet(base.static.copy(), base.dynamic.copy())
    return ExcitationSet(_normalize_columns(base.static + step * d_st, "static"),
                         _normalize_columns(base.dynamic + step * d_dy, "dynamic"))


@dataclass(frozen=True)
class DesignPoint:
    """One class GSM per DOF class plus the excitation set."""

    class_gsms: tuple[Gsm, ...]
    excitations: ExcitationSet

    def __post_init__(self):
        gsms = tuple(self.class_gsms)
        if not gsms:
            raise DimensionError("a design point needs at least one class GSM")
        object.__setattr__(self, "class_gsms", gsms)

    @property
    def n_classes(self) -> int:
        return len(self.class_gsms)

    def max_residual(self) -> float:
        res = [max(g.residuals()) for g in self.class_gsms]
        res.extend(self.excitations.residuals())
        return max(res)

    def n_complex_values(self) -> int:
        """Number of complex values stored in this design point."""
        return (sum(g.size ** 2 for g in self.class_gsms)
                + self.excitations.static.size + self.excitations.dynamic.size)


@dataclass
class TangentVector:
    """Ambient or tangent direction shaped like a :class:`DesignPoint`."""

    gsms: list[np.ndarray]
    static: np.ndarray
    dynamic: np.ndarray
    meta: dict = field(default_factory=dict, repr=False)

    @classmethod
    def zeros_like(cls, x: DesignPoint) -> "TangentVector":
        return cls([np.zeros_like(g.entries) for g in x.class_gsms],
                   np.zeros_like(x.excitations.static), np.zeros_like(x.excitations.dynamic))

    def __add__(self, other: "TangentVector") -> "TangentVector":
        return TangentVector([a + b for a, b in zip(self.gsms, other.gsms)],
                             self.static + other.static, self.dynamic + other.dynamic)

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        return self + (-1.0) * other

    def __rmul__(self, s: float) -> "TangentVector":
        return TangentVector([s * a for a in self.gsms], s * self.static, s * self.dynamic)

    def inner(self, other: "TangentVector") -> float:
        total = sum(inner(a, b) for a, b in zip(self.gsms, other.gsms))
        return total + inner(self.static, other.static) + inner(self.dynamic, other.dynamic)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def flatten(self) -> np.ndarray:
        """Concatenated complex entries (used for finite-difference checks)."""
        parts = [g.ravel() for g in self.gsms] + [self.static.ravel(), self.dynamic.ravel()]
        return np.concatenate(parts)


def _check_shapes(x: DesignPoint, v: TangentVector):
    if len(v.gsms) != x.n_classes:
        raise DimensionError(f"{len(v.gsms)} GSM components for {x.n_classes} classes")
    for g, d in zip(x.class_gsms, v.gsms):
        if np.shape(d) != g.entries.shape:
            raise DimensionError(f"GSM component shape {np.shape(d)} != {g.entries.shape}")
    if v.static.shape != x.excitations.static.shape or v.dynamic.shape != x.excitations.dynamic.shape:
        raise DimensionError("excitation component shape mismatch")


def riemannian_gradient(x: DesignPoint, egrad: TangentVector) -> TangentVector:
    """Project a Euclidean gradient componentwise onto the tangent space at ``x``."""
    _check_shapes(x, egrad)
    gsms = [us_project_tangent(g, d) for g, d in zip(x.class_gsms, egrad.gsms)]
    st, dy = excitation_project_tangent(x.excitations, egrad.static, egrad.dynamic)
    return TangentVector(gsms, st, dy)


def retract(x: DesignPoint, direction: TangentVector, step: float) -> DesignPoint:
    """Product-manifold retraction."""
    _check_shapes(x, direction)
    gsms = tuple(Gsm(us_retract(g, d, step), g.n_modes) for g, d in zip(x.class_gsms, direction.gsms))
    exc = excitation_retract(x.excitations, (direction.static, direction.dynamic), step)
    return DesignPoint(gsms, exc)
