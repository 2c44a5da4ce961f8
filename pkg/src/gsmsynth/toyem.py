"""Desk-scale array model built from free-space Hertzian dipoles.

Every element carries two modes, an x-directed and a y-directed infinitesimal
dipole, each normalized to unit radiated power. Mutual coupling comes from the
closed-form dipole field, normalized so that the self radiation resistance is
one; the coupling blocks are half of that normalized mutual impedance.

Elements sit on a regular grid in the z = 0 plane with ``k = col * rows + row``
and position ``(col * dx, row * dy, 0)`` in wavelengths.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coupled import CouplingMatrix, DofAssignment
from .errors import DatasetError, DomainError, ReciprocityWarning
from .manifolds import DesignPoint, ExcitationSet, Gsm
from .pattern import ModalFarFieldSet, SphereFields

__all__ = [
    "ArrayModel",
    "hertzian_mutual_impedance",
    "coupling_matrix",
    "modal_far_field",
    "dipole_pattern",
    "cut_angles",
    "build_cut_fields",
    "build_sphere_fields",
    "export_dataset",
    "import_dataset",
    "import_sphere_fields",
    "save_checkpoint",
    "load_checkpoint",
    "RECIPROCITY_TOL",
]

RECIPROCITY_TOL = 1e-9
PATTERN_SCALE = np.sqrt(3.0 / (8.0 * np.pi))
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArrayModel:
    """Regular ``rows x cols`` grid of crossed-dipole elements."""

    rows: int
    cols: int
    dx: float = 0.5
    dy: float = 0.5
    n_ports: int = 1

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError("grid dimensions must be positive")
        if self.dx <= 0 or self.dy <= 0:
            raise DomainError("element spacings must be positive")
        if self.n_ports < 1:
            raise DomainError("need at least one port per element")

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols

    @property
    def n_modes(self) -> int:
        return 2

    @property
    def polarizations(self) -> np.ndarray:
        return np.eye(3)[:2]

    def positions(self) -> np.ndarray:
        """Element positions ``(K, 3)`` in wavelengths, column-major."""
        k = np.arange(self.n_elements)
        col, row = divmod(k, self.rows)
        return np.column_stack([col * self.dx, row * self.dy, np.zeros(k.size)])

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "dx": self.dx, "dy": self.dy, "n_ports": self.n_ports}


def hertzian_mutual_impedance(p1, p2, separation) -> complex:
    """Normalized mutual impedance between two unit dipoles.

    ``separation`` is in wavelengths. The normalization makes the radiation
    resistance of a single dipole equal to one.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    r = np.asarray(separation, dtype=float)
    dist = np.linalg.norm(r)
    if dist == 0:
        raise DomainError("dipoles must not be co-located")
    x = 2 * np.pi * dist
    rh = r / dist
    a = (p1 @ rh) * (p2 @ rh)
    b = p1 @ p2
    jx = 1j * x
    c1 = 1 + 1 / jx - 1 / x**2
    c2 = (2 / jx) * (1 + 1 / jx)
    # the two field terms: transverse (c1) and radial (c2)
    return complex(-(3j / (2 * x)) * np.exp(-jx) * (c1 * (a - b) + c2 * a))


def _block(pols: np.ndarray, sep: np.ndarray) -> np.ndarray:
    n = pols.shape[0]
    out = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            out[i, j] = 0.5 * hertzian_mutual_impedance(pols[i], pols[j], sep)
    return out


def coupling_matrix(model: ArrayModel, mode: str = "toeplitz") -> CouplingMatrix:
    """Global coupling matrix; ``toeplitz`` evaluates each relative offset once."""
    K, N = model.n_elements, model.n_modes
    pos = model.positions()
    pols = model.polarizations
    G = np.zeros((K, N, K, N), dtype=complex)
    if mode == "direct":
        for k in range(K):
            for l in range(K):
                if k != l:
                    G[k, :, l, :] = _block(pols, pos[k] - pos[l])
    elif mode == "toeplitz":
        R, C = model.rows, model.cols
        cache = {}
        for dc in range(-(C - 1), C):
            for dr in range(-(R - 1), R):
                if dc or dr:
                    cache[dc, dr] = _block(pols, np.array([dc * model.dx, dr * model.dy, 0.0]))
        col, row = np.divmod(np.arange(K), R)
        for k in range(K):
            for l in range(K):
                if k != l:
                    G[k, :, l, :] = cache[col[k] - col[l], row[k] - row[l]]
    else:
        raise DomainError(f"unknown assembly mode {mode!r}")
    return CouplingMatrix(G.reshape(K * N, K * N), K, N)


def dipole_pattern(pol, theta_deg, phi_deg) -> np.ndarray:
    """Unit-power dipole far field ``(E_theta, E_phi)``, broadcast over angles."""
    th = np.radians(np.asarray(theta_deg, dtype=float))
    ph = np.radians(np.asarray(phi_deg, dtype=float))
    th, ph = np.broadcast_arrays(th, ph)
    p = np.asarray(pol, dtype=float)
    e_th = p[0] * np.cos(th) * np.cos(ph) + p[1] * np.cos(th) * np.sin(ph) - p[2] * np.sin(th)
    e_ph = -p[0] * np.sin(ph) + p[1] * np.cos(ph)
    return PATTERN_SCALE * np.stack([e_th, e_ph], axis=-1)


def _position_phase(pos: np.ndarray, theta_deg, phi_deg) -> np.ndarray:
    th = np.radians(np.asarray(theta_deg, dtype=float))
    ph = np.radians(np.asarray(phi_deg, dtype=float))
    u = np.sin(th) * np.cos(ph)
    v = np.sin(th) * np.sin(ph)
    w = np.cos(th)
    return np.exp(2j * np.pi * (pos[0] * u + pos[1] * v + pos[2] * w))


def modal_far_field(model: ArrayModel, element: int, mode: int, theta_deg, phi_deg) -> np.ndarray:
    """Far field of one mode of one element including its position phase."""
    pos = model.positions()[element]
    base = dipole_pattern(model.polarizations[mode], theta_deg, phi_deg)
    return base * _position_phase(pos, theta_deg, phi_deg)[..., None]


def cut_angles(phi_deg: float = 0.0, step: float = 1.0) -> np.ndarray:
    th = np.arange(-90.0, 90.0 + step / 2, step)
    return np.column_stack([th, np.full(th.size, phi_deg)])


def build_cut_fields(model: ArrayModel, angles: np.ndarray | None = None) -> ModalFarFieldSet:
    """Modal far fields of every element on an angle list (default: the phi = 0 cut)."""
    ang = cut_angles() if angles is None else np.asarray(angles, dtype=float).reshape(-1, 2)
    K, N = model.n_elements, model.n_modes
    pos = model.positions()
    samples = np.empty((K, N, ang.shape[0], 2), dtype=complex)
    base = np.stack([dipole_pattern(p, ang[:, 0], ang[:, 1]) for p in model.polarizations])
    for k in range(K):
        samples[k] = base * _position_phase(pos[k], ang[:, 0], ang[:, 1])[None, :, None]
    return ModalFarFieldSet(ang, samples)


def build_sphere_fields(model: ArrayModel, step: float = 1.0) -> SphereFields:
    """Full-sphere fields in factored form (reference patterns plus positions)."""
    th = np.arange(0.0, 180.0 + step / 2, step)
    ph = np.arange(0.0, 360.0, step)
    tt, pp = np.meshgrid(th, ph, indexing="ij")
    ref = np.stack([dipole_pattern(p, tt, pp) for p in model.polarizations])
    return SphereFields(th, ph, ref, model.positions())


# dataset directory format

def _write_array(path: Path, arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<c16")
    path.write_bytes(a.tobytes(order="C"))
    return {"file": path.name, "shape": list(a.shape), "dtype": "complex128", "byte_order": "little"}


def _read_array(root: Path, meta: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in meta["shape"])
        path = root / meta["file"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed array entry {meta!r}") from exc
    if meta.get("dtype", "complex128") != "complex128" or meta.get("byte_order", "little") != "little":
        raise DatasetError(f"unsupported encoding for {meta['file']}")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    expected = int(np.prod(shape)) * 16
    if len(raw) != expected:
        raise DatasetError(f"{meta['file']}: {len(raw)} bytes, expected {expected} for shape {shape}")
    arr = np.frombuffer(raw, dtype="<c16").reshape(shape).astype(complex)
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{meta['file']} contains non-finite values")
    return arr


def _atomic_dir(path: Path, write):
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=parent))
    try:
        write(tmp)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _read_manifest(path: Path) -> dict:
    try:
        return json.loads((Path(path) / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"no manifest in {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"malformed manifest in {path}: {exc}") from exc


def export_dataset(model: ArrayModel, G: CouplingMatrix, fields: ModalFarFieldSet, path,
                   sphere: SphereFields | None = None) -> Path:
    """Write a dataset directory atomically."""
    if G.n_elements != model.n_elements or G.n_modes != model.n_modes:
        raise DatasetError("coupling matrix does not match the array model")
    if fields.n_elements != model.n_elements or fields.n_modes != model.n_modes:
        raise DatasetError("far fields do not match the array model")

    def write(tmp: Path):
        manifest = {
            "kind": "array-dataset",
            "version": FORMAT_VERSION,
            "model": model.to_dict(),
            "K": model.n_elements,
            "N": model.n_modes,
            "P": model.n_ports,
            "angles": np.asarray(fields.angles).tolist(),
            "arrays": {
                "coupling": _write_array(tmp / "coupling.bin", G.matrix),
                "cut_fields": _write_array(tmp / "cut_fields.bin", fields.samples),
            },
        }
        if sphere is not None:
            if sphere.positions is None:
                raise DatasetError("only factored sphere fields can be exported")
            manifest["sphere"] = {"theta_deg": sphere.theta_deg.tolist(), "phi_deg": sphere.phi_deg.tolist()}
            manifest["arrays"]["sphere_reference"] = _write_array(tmp / "sphere_reference.bin", sphere.samples)
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    path = Path(path)
    _atomic_dir(path, write)
    return path


def import_dataset(path, allow_nonreciprocal: bool = False):
    """Read and validate a dataset directory.

    Returns ``(model, coupling, fields)``. Reciprocity violations above
    :data:`RECIPROCITY_TOL` emit a :class:`ReciprocityWarning` and are rejected
    unless ``allow_nonreciprocal`` is set.
    """
    root = Path(path)
    man = _read_manifest(root)
    try:
        model = ArrayModel(**man["model"])
        K, N, P = int(man["K"]), int(man["N"]), int(man["P"])
        arrays = man["arrays"]
        angles = np.asarray(man["angles"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed manifest: {exc}") from exc
    if (K, N, P) != (model.n_elements, model.n_modes, model.n_ports):
        raise DatasetError(f"manifest dimensions K={K}, N={N}, P={P} disagree with the grid")
    g = _read_array(root, arrays["coupling"])
    if g.shape != (K * N, K * N):
        raise DatasetError(f"coupling shape {g.shape}, expected ({K * N}, {K * N})")
    samples = _read_array(root, arrays["cut_fields"])
    if samples.shape != (K, N, angles.shape[0], 2):
        raise DatasetError(f"far-field shape {samples.shape} does not match K, N and the angle grid")
    G = CouplingMatrix(g, K, N)
    if G.diagonal_max() != 0:
        raise DatasetError(f"diagonal coupling blocks must be zero (max {G.diagonal_max():.3g})")
    err = G.reciprocity_error()
    if err > RECIPROCITY_TOL:
        warnings.warn(f"coupling violates reciprocity by {err:.3g}", ReciprocityWarning, stacklevel=2)
        if not allow_nonreciprocal:
            raise DatasetError(f"reciprocity error {err:.3g} exceeds {RECIPROCITY_TOL:g}")
    return model, G, ModalFarFieldSet(angles, samples)


def import_sphere_fields(path) -> SphereFields | None:
    """Full-sphere fields stored with a dataset, if any."""
    root = Path(path)
    man = _read_manifest(root)
    if "sphere" not in man:
        return None
    model = ArrayModel(**man["model"])
    ref = _read_array(root, man["arrays"]["sphere_reference"])
    return SphereFields(man["sphere"]["theta_deg"], man["sphere"]["phi_deg"], ref, model.positions())


def save_checkpoint(design: DesignPoint, path, assignment: DofAssignment | None = None,
                    extra: dict | None = None) -> Path:
    """Store a design point in the dataset binary format."""
    n_modes = {g.n_modes for g in design.class_gsms}
    if len(n_modes) != 1:
        raise DatasetError("all class GSMs must share the mode count")

    def write(tmp: Path):
        manifest = {
            "kind": "checkpoint",
            "version": FORMAT_VERSION,
            "n_modes": n_modes.pop(),
            "arrays": {
                "gsms": _write_array(tmp / "gsms.bin", np.stack([g.entries for g in design.class_gsms])),
                "static": _write_array(tmp / "static.bin", design.excitations.static),
                "dynamic": _write_array(tmp / "dynamic.bin", design.excitations.dynamic),
            },
        }
        if assignment is not None:
            manifest["assignment"] = {"class_of": assignment.class_of.tolist(), "rows": assignment.rows,
                                      "cols": assignment.cols, "strategy": assignment.strategy}
        if extra:
            manifest["extra"] = extra
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    path = Path(path)
    _atomic_dir(path, write)
    return path


def load_checkpoint(path):
    """Return ``(design, assignment_or_None, extra)``."""
    root = Path(path)
    man = _read_manifest(root)
    if man.get("kind") != "checkpoint":
        raise DatasetError(f"{path} is not a checkpoint")
    try:
        arrays = man["arrays"]
        n_modes = int(man["n_modes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed checkpoint manifest: {exc}") from exc
    gsms = _read_array(root, arrays["gsms"])
    if gsms.ndim != 3 or gsms.shape[1] != gsms.shape[2]:
        raise DatasetError(f"GSM stack has shape {gsms.shape}")
    static = _read_array(root, arrays["static"])
    dynamic = _read_array(root, arrays["dynamic"])
    design = DesignPoint(tuple(Gsm(g, n_modes) for g in gsms), ExcitationSet(static, dynamic))
    assignment = None
    if "assignment" in man:
        a = man["assignment"]
        assignment = DofAssignment(np.asarray(a["class_of"], dtype=int), a["rows"], a["cols"], a.get("strategy", "custom"))
    return design, assignment, man.get("extra", {})
