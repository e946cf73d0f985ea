"""Structured quadrilateral meshing of a microstructure window.

Nodes are numbered row by row from corner A=(0, 0); element ``(i, j)`` has
nodes ``n, n+1, n+d+2, n+d+1`` (counter-clockwise) with ``n = j*(d+1) + i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .microgen import Microstructure, Phase, fiber_mask


@dataclass(frozen=True, eq=False)
class QuadMesh:
    nodes: np.ndarray  # (n_nodes, 2) px
    elements: np.ndarray  # (n_elem, 4) int, counter-clockwise
    phase: np.ndarray  # (n_elem,) int8, Phase values
    divisions: int
    window: float
    edge_sets: dict  # "AB", "BC", "CD", "DA" -> node index arrays

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def element_areas(self) -> np.ndarray:
        xy = self.nodes[self.elements]
        x, y = xy[..., 0], xy[..., 1]
        # shoelace
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)


def structured_grid(window: float, divisions: int, phase=None) -> QuadMesh:
    if divisions < 2:
        raise ValueError(f"divisions must be >= 2, got {divisions}")
    d = int(divisions)
    ticks = np.linspace(0.0, float(window), d + 1)
    X, Y = np.meshgrid(ticks, ticks)  # row j is y = ticks[j]
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    jj, ii = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    n0 = (jj * (d + 1) + ii).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + d + 2, n0 + d + 1])

    row = d + 1
    edges = {
        "AB": np.arange(0, row),
        "BC": np.arange(d, row * row, row),
        "CD": np.arange(d * row + d, d * row - 1, -1),
        "DA": np.arange(d * row, -1, -row),
    }
    if phase is None:
        phase = np.full(d * d, Phase.MATRIX, dtype=np.int8)
    return QuadMesh(nodes, elements, np.asarray(phase, dtype=np.int8), d, float(window), edges)


def pixelate(ms: Microstructure, divisions: int) -> QuadMesh:
    """Tag each element of a ``divisions x divisions`` grid by the phase at its centroid."""
    mesh = structured_grid(ms.window_px, divisions)
    c = mesh.centroids()
    phase = np.where(fiber_mask(ms, c[:, 0], c[:, 1]), Phase.FIBER, Phase.MATRIX).astype(np.int8)
    return QuadMesh(mesh.nodes, mesh.elements, phase, mesh.divisions, mesh.window, mesh.edge_sets)


def mesh_volume_fraction(mesh: QuadMesh) -> float:
    areas = mesh.element_areas()
    return float(areas[mesh.phase == Phase.FIBER].sum() / areas.sum())


def write_csv(mesh: QuadMesh, directory) -> tuple[Path, Path]:
    """Dump ``nodes.csv`` (id,x,y) and ``elements.csv`` (id,n1,n2,n3,n4,phase)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    node_path, elem_path = directory / "nodes.csv", directory / "elements.csv"
    with node_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for i, (x, y) in enumerate(mesh.nodes):
            w.writerow([i, repr(float(x)), repr(float(y))])
    with elem_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "n1", "n2", "n3", "n4", "phase"])
        for i, (conn, ph) in enumerate(zip(mesh.elements, mesh.phase)):
            w.writerow([i, *map(int, conn), Phase(int(ph)).name.lower()])
    return node_path, elem_path
