"""Linear-elastic plane-strain finite elements on quadrilateral RVE meshes.

The in-plane axes x, y correspond to the material 2 and 3 directions; z is
the fiber direction with zero normal strain.  Elements are bilinear Q4 with
2x2 Gauss quadrature.  Fixities follow the usual RVE layout: edge DA (x = 0)
is a roller in x, edge AB (y = 0) a roller in y.

Traction loading is solved as two superposed parts.  The normal tractions
``sx`` on BC and ``sy`` on CD act against the edge rollers.  The shear ``txy``
acts on all four edges and is held only against rigid-body motion (A pinned,
B restrained in y): full-edge rollers admit no uniform shear field, and with
this split a homogeneous plate carries exactly uniform stress under any
constant traction combination.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EmptyRegion, SingularJacobian, SolverFailure
from .mesh import QuadMesh
from .microgen import Phase

RESIDUAL_TOL = 1e-10

_G = 1.0 / math.sqrt(3.0)
GAUSS_POINTS = np.array([(-_G, -_G), (_G, -_G), (_G, _G), (-_G, _G)])
_NODE_XI = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


@dataclass(frozen=True)
class Material:
    E: float
    nu: float
    sigma_f_t: float
    sigma_f_c: float  # magnitude, > 0
    name: str = ""

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("E must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("nu must lie in [0, 0.5)")
        if self.sigma_f_t <= 0 or self.sigma_f_c <= 0:
            raise ValueError("failure stresses must be positive magnitudes")

    def plane_strain_matrix(self) -> np.ndarray:
        E, nu = self.E, self.nu
        c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return c * np.array(
            [[1.0 - nu, nu, 0.0], [nu, 1.0 - nu, 0.0], [0.0, 0.0, 0.5 - nu]]
        )


FIBER_T800 = Material(2.25e6, 0.25, 35000.0, 35000.0, "T800")
MATRIX_F3900 = Material(4.09e5, 0.387, 15375.0, 23000.0, "F3900")
DEFAULT_MATERIALS = {Phase.FIBER: FIBER_T800, Phase.MATRIX: MATRIX_F3900}


class StressTensor4(NamedTuple):
    """Plane-strain stress (sx, sy, sz, txy) in psi; txz = tyz = 0."""

    sx: float
    sy: float
    sz: float
    txy: float

    def scaled(self, factor: float) -> "StressTensor4":
        return StressTensor4(*(factor * v for v in self))

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True)
class BoundaryConditions:
    """Either a traction load (sx, sy, txy) or an imposed normal strain on BC."""

    sx: float = 0.0
    sy: float = 0.0
    txy: float = 0.0
    strain: float | None = None

    def __post_init__(self):
        if self.strain is not None and any((self.sx, self.sy, self.txy)):
            raise ValueError("traction and displacement loads are mutually exclusive")

    @classmethod
    def traction(cls, sx=0.0, sy=0.0, txy=0.0):
        return cls(float(sx), float(sy), float(txy))

    @classmethod
    def displacement(cls, strain):
        return cls(strain=float(strain))

    @property
    def is_displacement(self) -> bool:
        return self.strain is not None


@dataclass(eq=False)
class SolveResult:
    displacements: np.ndarray  # (n_nodes, 2)
    stress: np.ndarray  # (n_elem, 4): sx, sy, sz, txy, mean over Gauss points
    volumes: np.ndarray  # (n_elem,)
    reactions: np.ndarray  # (2 n_nodes,), nonzero only on constrained dofs
    residual: float

    def element_stress(self, e: int) -> StressTensor4:
        return StressTensor4(*map(float, self.stress[e]))


# ----------------------------------------------------------------------------
# element level
# ----------------------------------------------------------------------------


def _dshape(xi, eta):
    """dN/dxi and dN/deta, shape (2, 4)."""
    return 0.25 * np.array(
        [
            _NODE_XI[:, 0] * (1.0 + _NODE_XI[:, 1] * eta),
            _NODE_XI[:, 1] * (1.0 + _NODE_XI[:, 0] * xi),
        ]
    )


_DSHAPE_GP = np.stack([_dshape(xi, eta) for xi, eta in GAUSS_POINTS])  # (4gp, 2, 4)


def b_matrices(coords: np.ndarray):
    """Strain-displacement matrices at the Gauss points.

    ``coords`` is (n_elem, 4, 2); returns B (n_elem, 4, 3, 8) and det J
    (n_elem, 4).  Raises SingularJacobian on non-positive det J.
    """
    coords = np.asarray(coords, dtype=float)
    J = np.einsum("gak,ekb->egab", _DSHAPE_GP, coords)  # (E, gp, 2, 2)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    scale = np.abs(coords).max() ** 2 if coords.size else 1.0
    if np.any(det <= 1e-12 * max(scale, 1e-300)):
        bad = np.unique(np.nonzero(det <= 1e-12 * max(scale, 1e-300))[0])
        raise SingularJacobian(f"non-positive Jacobian in element(s) {bad[:10].tolist()}")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 1, 1] = J[..., 0, 0]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    inv /= det[..., None, None]
    dN = np.einsum("egab,gbk->egak", inv, _DSHAPE_GP)  # d/dx, d/dy
    B = np.zeros(coords.shape[:1] + (4, 3, 8))
    B[..., 0, 0::2] = dN[..., 0, :]
    B[..., 1, 1::2] = dN[..., 1, :]
    B[..., 2, 0::2] = dN[..., 1, :]
    B[..., 2, 1::2] = dN[..., 0, :]
    return B, det


def element_stiffness(coords, mat: Material) -> np.ndarray:
    """8x8 stiffness of one Q4 element, dofs ordered (u1, v1, ..., u4, v4)."""
    B, det = b_matrices(np.asarray(coords, dtype=float)[None])
    D = mat.plane_strain_matrix()
    return np.einsum("gik,ij,gjl,g->kl", B[0], D, B[0], det[0])


def strain_energy(coords, mat: Material, u) -> float:
    """0.5 * integral of eps^T D eps over the element, by 2x2 quadrature."""
    B, det = b_matrices(np.asarray(coords, dtype=float)[None])
    eps = np.einsum("gik,k->gi", B[0], np.asarray(u, dtype=float))
    D = mat.plane_strain_matrix()
    return 0.5 * float(np.einsum("gi,ij,gj,g->", eps, D, eps, det[0]))


# ----------------------------------------------------------------------------
# global model
# ----------------------------------------------------------------------------


def _edge_loads(nodes: np.ndarray, edge: np.ndarray, tx: float, ty: float, f: np.ndarray):
    """Add consistent nodal forces of a constant traction along an ordered node chain."""
    p = nodes[edge]
    seg = np.hypot(*(p[1:] - p[:-1]).T)
    w = np.zeros(len(edge))
    w[:-1] += 0.5 * seg
    w[1:] += 0.5 * seg
    np.add.at(f, 2 * edge, tx * w)
    np.add.at(f, 2 * edge + 1, ty * w)


class RVEModel:
    """Assembled stiffness of one mesh, factorized once per constraint set.

    Independent instances share no mutable state, so separate RVEs can be
    solved concurrently; a single instance is safe for concurrent ``solve``
    calls once every factorization exists (see :meth:`prepare`).
    """

    def __init__(self, mesh: QuadMesh, materials=None):
        materials = dict(DEFAULT_MATERIALS if materials is None else materials)
        self.mesh = mesh
        self.materials = materials
        self.n_dof = 2 * mesh.n_nodes

        coords = mesh.nodes[mesh.elements]
        B, det = b_matrices(coords)
        D = np.empty((mesh.n_elements, 3, 3))
        self.nu = np.empty(mesh.n_elements)
        for ph in np.unique(mesh.phase):
            mat = materials[Phase(int(ph))]
            sel = mesh.phase == ph
            D[sel] = mat.plane_strain_matrix()
            self.nu[sel] = mat.nu
        Ke = np.einsum("egik,eij,egjl,eg->ekl", B, D, B, det)
        self.element_dofs = np.empty((mesh.n_elements, 8), dtype=np.int64)
        self.element_dofs[:, 0::2] = 2 * mesh.elements
        self.element_dofs[:, 1::2] = 2 * mesh.elements + 1
        rows = np.repeat(self.element_dofs, 8, axis=1).ravel()
        cols = np.tile(self.element_dofs, (1, 8)).ravel()
        self.K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(self.n_dof,) * 2).tocsr()
        self.K.sum_duplicates()
        # mean over Gauss points of D B, for stress recovery
        self.stress_op = np.einsum("eij,ejk->eik", D, B.mean(axis=1))
        self.volumes = det.sum(axis=1)  # 2x2 rule, unit weights, unit thickness
        self._factors = {}

    # constraints --------------------------------------------------------
    # "roller": DA in x, AB in y; "strain": roller plus imposed ux on BC;
    # "rigid": A in x and y, B in y (shear part of a traction load)
    def _constrained(self, kind: str) -> np.ndarray:
        e = self.mesh.edge_sets
        if kind == "rigid":
            a, b = e["AB"][0], e["AB"][-1]
            return np.array([2 * a, 2 * a + 1, 2 * b + 1])
        dofs = [2 * e["DA"], 2 * e["AB"] + 1]
        if kind == "strain":
            dofs.append(2 * e["BC"])
        return np.unique(np.concatenate(dofs))

    def _factor(self, kind: str):
        if kind not in self._factors:
            fixed = self._constrained(kind)
            free = np.setdiff1d(np.arange(self.n_dof), fixed)
            Kff = self.K[free][:, free].tocsc()
            Kfp = self.K[free][:, fixed].tocsr()
            lu = spla.splu(Kff, permc_spec="MMD_AT_PLUS_A")
            self._factors[kind] = (free, fixed, Kff, Kfp, lu)
        return self._factors[kind]

    def prepare(self, kinds=("roller", "rigid", "strain")):
        """Factorize constraint sets up front, before sharing across threads."""
        for kind in kinds:
            self._factor(kind)
        return self

    def normal_load_vector(self, bc: BoundaryConditions) -> np.ndarray:
        f = np.zeros(self.n_dof)
        if not bc.is_displacement:
            nodes, e = self.mesh.nodes, self.mesh.edge_sets
            _edge_loads(nodes, e["BC"], bc.sx, 0.0, f)
            _edge_loads(nodes, e["CD"], 0.0, bc.sy, f)
        return f

    def shear_load_vector(self, bc: BoundaryConditions) -> np.ndarray:
        f = np.zeros(self.n_dof)
        if not bc.is_displacement:
            nodes, e = self.mesh.nodes, self.mesh.edge_sets
            _edge_loads(nodes, e["BC"], 0.0, bc.txy, f)
            _edge_loads(nodes, e["CD"], bc.txy, 0.0, f)
            _edge_loads(nodes, e["DA"], 0.0, -bc.txy, f)
            _edge_loads(nodes, e["AB"], -bc.txy, 0.0, f)
        return f

    def load_vector(self, bc: BoundaryConditions) -> np.ndarray:
        return self.normal_load_vector(bc) + self.shear_load_vector(bc)

    def _solve_part(self, kind, F, Up):
        free, fixed, Kff, Kfp, lu = self._factor(kind)
        rhs = F[free] - Kfp @ Up if Up is not None else F[free]
        Uf = lu.solve(rhs)
        num = np.linalg.norm(Kff @ Uf - rhs, axis=0)
        den = np.linalg.norm(rhs, axis=0)
        residual = np.where(den > 0, num / np.where(den > 0, den, 1.0), num)
        if not np.all(np.isfinite(Uf)) or residual.max() > RESIDUAL_TOL:
            raise SolverFailure(f"relative residual {residual.max():.3e} exceeds {RESIDUAL_TOL}")
        U = np.zeros_like(F)
        U[free] = Uf
        if Up is not None:
            U[fixed] = Up
        R = self.K @ U - F
        R[free] = 0.0
        return U, R, residual

    # solving ------------------------------------------------------------
    def solve_many(self, bcs: Sequence[BoundaryConditions]) -> list[SolveResult]:
        """Solve several load cases of the same kind against cached factorizations."""
        if not bcs:
            return []
        kinds = {bc.is_displacement for bc in bcs}
        if len(kinds) != 1:
            raise ValueError("solve_many needs load cases of a single kind")
        if kinds.pop():
            fixed = self._factor("strain")[1]
            Up = np.zeros((len(fixed), len(bcs)))
            bc_dofs = np.isin(fixed, 2 * self.mesh.edge_sets["BC"])
            Up[bc_dofs] = np.array([bc.strain for bc in bcs]) * self.mesh.window
            U, R, residual = self._solve_part("strain", np.zeros((self.n_dof, len(bcs))), Up)
        else:
            Fn = np.column_stack([self.normal_load_vector(bc) for bc in bcs])
            Fs = np.column_stack([self.shear_load_vector(bc) for bc in bcs])
            Un, Rn, res_n = self._solve_part("roller", Fn, None)
            Us, Rs, res_s = self._solve_part("rigid", Fs, None)
            U, R, residual = Un + Us, Rn + Rs, np.maximum(res_n, res_s)
        stress = self.recover_stress(U)
        return [
            SolveResult(U[:, c].reshape(-1, 2), stress[c], self.volumes, R[:, c], float(residual[c]))
            for c in range(len(bcs))
        ]

    def solve(self, bc: BoundaryConditions) -> SolveResult:
        return self.solve_many([bc])[0]

    def recover_stress(self, U: np.ndarray) -> np.ndarray:
        """Per-element (sx, sy, sz, txy) for displacement columns ``U`` -> (m, n_elem, 4)."""
        U = np.asarray(U).reshape(self.n_dof, -1)
        ue = U[self.element_dofs]  # (E, 8, m)
        inplane = np.einsum("eik,ekm->mei", self.stress_op, ue)
        out = np.empty(inplane.shape[:2] + (4,))
        out[..., 0] = inplane[..., 0]
        out[..., 1] = inplane[..., 1]
        out[..., 2] = self.nu * (inplane[..., 0] + inplane[..., 1])
        out[..., 3] = inplane[..., 2]
        return out


def solve(mesh: QuadMesh, materials, bc: BoundaryConditions) -> SolveResult:
    return RVEModel(mesh, materials).solve(bc)


# ----------------------------------------------------------------------------
# post-processing
# ----------------------------------------------------------------------------


def principal_stresses(s) -> tuple[float, float, float]:
    """Ascending principal stresses of a plane-strain tensor; sz is one of them."""
    sx, sy, sz, txy = (float(v) for v in s)
    c = 0.5 * (sx + sy)
    r = math.hypot(0.5 * (sx - sy), txy)
    return tuple(sorted((c - r, c + r, sz)))


def principal_stresses_array(S) -> np.ndarray:
    """Row-wise version of :func:`principal_stresses` for an (n, 4) array."""
    S = np.asarray(S, dtype=float)
    c = 0.5 * (S[..., 0] + S[..., 1])
    r = np.hypot(0.5 * (S[..., 0] - S[..., 1]), S[..., 3])
    return np.sort(np.stack([c - r, c + r, S[..., 2]], axis=-1), axis=-1)


def _as_index_groups(groups, n):
    out = []
    for g in groups:
        g = np.asarray(g)
        out.append(np.nonzero(g)[0] if g.dtype == bool else g.astype(np.int64))
    return out


def homogenize(values, volumes, groups=None):
    """Volume average computed per group first, then across groups.

    ``groups`` is a sequence of index arrays (or boolean masks) partitioning
    the elements, typically one per element type or phase; ``None`` means a
    single group.  Works for scalar (n,) or tensor (n, ...) values.
    """
    values = np.asarray(values, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    n = len(volumes)
    if values.shape[0] != n:
        raise ValueError("values and volumes differ in length")
    if n == 0:
        raise EmptyRegion("no elements to homogenize")
    if np.any(volumes <= 0):
        raise ValueError("element volumes must be positive")
    index_groups = [np.arange(n)] if groups is None else _as_index_groups(groups, n)
    covered = np.sort(np.concatenate(index_groups)) if index_groups else np.array([])
    if len(covered) != n or np.any(covered != np.arange(n)):
        raise ValueError("groups must partition the element set")

    total = np.zeros(values.shape[1:])
    total_volume = 0.0
    for idx in index_groups:
        if len(idx) == 0:
            raise EmptyRegion("a group has no elements")
        v = volumes[idx]
        group_volume = v.sum()
        group_mean = np.tensordot(v, values[idx], axes=(0, 0)) / group_volume
        total = total + group_mean * group_volume
        total_volume += group_volume
    result = total / total_volume
    return float(result) if result.ndim == 0 else result


def phase_groups(phase: np.ndarray) -> list[np.ndarray]:
    return [np.nonzero(phase == p)[0] for p in np.unique(phase)]


def homogenize_phase(values, volumes, phase, which: Phase):
    """Average over the elements of one phase; EmptyRegion if it has none."""
    idx = np.nonzero(np.asarray(phase) == which)[0]
    if len(idx) == 0:
        raise EmptyRegion(f"no {Phase(which).name.lower()} elements")
    return homogenize(np.asarray(values)[idx], np.asarray(volumes)[idx])


@dataclass(frozen=True)
class EffectiveModulus:
    E22: float
    nu23: float
    stress: np.ndarray = field(repr=False)


def effective_modulus(mesh: QuadMesh, materials=None, strain: float = 1e-3, model=None):
    """Apparent transverse modulus and Poisson ratio from an imposed strain on BC.

    CD is left free, so the lateral strain is the mean y-displacement of CD
    over the window height.
    """
    model = model or RVEModel(mesh, materials)
    res = model.solve(BoundaryConditions.displacement(strain))
    s = homogenize(res.stress, res.volumes, phase_groups(mesh.phase))
    lateral = res.displacements[mesh.edge_sets["CD"], 1].mean() / mesh.window
    return EffectiveModulus(float(s[0] / strain), float(-lateral / strain), s)


def write_stress_csv(result: SolveResult, mesh: QuadMesh, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "sx", "sy", "sz", "txy", "phase"])
        for e, (row, ph) in enumerate(zip(result.stress, mesh.phase)):
            w.writerow([e, *(repr(float(v)) for v in row), Phase(int(ph)).name.lower()])
