"""Failure-surface point clouds from batches of RVE traction analyses.

Each load case is solved once at its nominal amplitude.  The per-phase
homogenized stresses give principal values, the smallest factor that brings
a fiber or matrix principal stress to its failure value is found, and the
RVE-level homogenized stress scaled by that factor becomes one point of the
cloud.  Linearity makes the scaling exact.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CaseFailure, EmptySurface, NoValidCandidate, ParseError, PCFCError, SchemaError
from .fea import (
    DEFAULT_MATERIALS,
    BoundaryConditions,
    Material,
    RVEModel,
    StressTensor4,
    homogenize,
    homogenize_phase,
    phase_groups,
    principal_stresses,
    principal_stresses_array,
)
from .mesh import pixelate
from .microgen import Microstructure, Phase

CSV_HEADER = ["rve_id", "run_id", "sx", "sy", "sz", "txy", "mode", "s_f"]


class FailureMode(Enum):
    FIBER_TENSION = "FT"
    FIBER_COMPRESSION = "FC"
    MATRIX_TENSION = "MT"
    MATRIX_COMPRESSION = "MC"

    @property
    def label(self) -> str:
        return self.name.replace("_", " ").capitalize()


_MODES = {
    (Phase.FIBER, "t"): FailureMode.FIBER_TENSION,
    (Phase.FIBER, "c"): FailureMode.FIBER_COMPRESSION,
    (Phase.MATRIX, "t"): FailureMode.MATRIX_TENSION,
    (Phase.MATRIX, "c"): FailureMode.MATRIX_COMPRESSION,
}


@dataclass(frozen=True)
class LoadGrid:
    """Equally spaced traction levels in [-a, a] for each of sx, sy, txy."""

    levels_m: int = 5
    amplitude_a: float = 1000.0

    def __post_init__(self):
        if self.levels_m < 3 or self.levels_m % 2 == 0:
            raise ValueError(f"levels_m must be an odd integer >= 3, got {self.levels_m}")
        if not self.amplitude_a > 0:
            raise ValueError("amplitude_a must be positive")

    @property
    def levels(self) -> np.ndarray:
        half = (self.levels_m - 1) // 2
        # integer ratios keep the levels exactly symmetric about zero
        return self.amplitude_a * np.arange(-half, half + 1) / half

    @property
    def n_cases(self) -> int:
        return self.levels_m**3 - 1


@dataclass(frozen=True)
class FailurePoint:
    stress: StressTensor4
    mode: FailureMode
    s_f: float
    rve_id: str
    run_id: str


@dataclass(frozen=True, eq=False)
class FailureSurface:
    points: tuple[FailurePoint, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.points:
            raise EmptySurface("a failure surface needs at least one point")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dimension(self) -> int:
        return 4

    def array(self) -> np.ndarray:
        return np.array([p.stress for p in self.points], dtype=float)

    def subset(self, rve_ids) -> "FailureSurface":
        keep = set(rve_ids)
        return FailureSurface(tuple(p for p in self.points if p.rve_id in keep), dict(self.provenance))


def enumerate_load_cases(grid: LoadGrid) -> list[tuple[float, float, float]]:
    """All (sx, sy, txy) level combinations except the all-zero one."""
    lv = [float(v) for v in grid.levels]
    return [c for c in itertools.product(lv, repeat=3) if any(c)]


def run_id(case_index: int) -> str:
    return f"Run{case_index + 1}"


def scale_to_failure(
    phase_stresses: Mapping[Phase, StressTensor4], materials: Mapping[Phase, Material] = None
) -> tuple[float, FailureMode]:
    """Smallest factor taking a phase's principal stress to its failure value.

    Tension candidates use the largest principal stress when it is positive,
    compression candidates the smallest when it is negative.  Ties resolve in
    the order fiber tension, fiber compression, matrix tension, matrix
    compression.
    """
    materials = DEFAULT_MATERIALS if materials is None else materials
    best = None
    for ph in (Phase.FIBER, Phase.MATRIX):
        if ph not in phase_stresses:
            continue
        mat = materials[ph]
        s1, _, s3 = principal_stresses(phase_stresses[ph])
        candidates = []
        if s3 > 0:
            candidates.append((mat.sigma_f_t / s3, _MODES[ph, "t"]))
        if s1 < 0:
            candidates.append((mat.sigma_f_c / -s1, _MODES[ph, "c"]))
        for cand in candidates:
            if best is None or cand[0] < best[0]:
                best = cand
    if best is None:
        raise NoValidCandidate("no phase has a positive or negative principal stress")
    return float(best[0]), best[1]


def elementwise_scale_to_failure(stress, phase, materials=None) -> tuple[float, FailureMode, int]:
    """Diagnostic variant: minimum over individual elements instead of phase averages.

    Returns (s_f, mode, element index).
    """
    materials = DEFAULT_MATERIALS if materials is None else materials
    P = principal_stresses_array(stress)
    best = (math.inf, None, -1)
    for ph in (Phase.FIBER, Phase.MATRIX):
        sel = np.nonzero(np.asarray(phase) == ph)[0]
        if len(sel) == 0:
            continue
        mat = materials[ph]
        s1, s3 = P[sel, 0], P[sel, 2]
        with np.errstate(divide="ignore"):
            t = np.where(s3 > 0, mat.sigma_f_t / np.where(s3 > 0, s3, 1.0), np.inf)
            c = np.where(s1 < 0, mat.sigma_f_c / np.where(s1 < 0, -s1, 1.0), np.inf)
        for vals, sense in ((t, "t"), (c, "c")):
            i = int(np.argmin(vals))
            if vals[i] < best[0]:
                best = (float(vals[i]), _MODES[ph, sense], int(sel[i]))
    if best[1] is None:
        raise NoValidCandidate("all element stresses are zero")
    return best


# ----------------------------------------------------------------------------
# batch
# ----------------------------------------------------------------------------


def _phase_averages(stress, volumes, phase):
    out = {}
    for ph in (Phase.FIBER, Phase.MATRIX):
        if np.any(phase == ph):
            out[ph] = StressTensor4(*map(float, homogenize_phase(stress, volumes, phase, ph)))
    return out


def failure_point(result, phase, materials, rve_id, rid) -> FailurePoint:
    per_phase = _phase_averages(result.stress, result.volumes, phase)
    s_f, mode = scale_to_failure(per_phase, materials)
    rve = homogenize(result.stress, result.volumes, phase_groups(phase))
    return FailurePoint(StressTensor4(*(float(s_f * v) for v in rve)), mode, s_f, rve_id, rid)


def _solve_chunk(model, materials, rve_id, cases, first):
    bcs = [BoundaryConditions.traction(*c) for c in cases]
    try:
        results = model.solve_many(bcs)
    except PCFCError:
        results = None
    points = []
    for offset, bc in enumerate(bcs):
        rid = run_id(first + offset)
        try:
            res = results[offset] if results is not None else model.solve(bc)
            points.append(failure_point(res, model.mesh.phase, materials, rve_id, rid))
        except PCFCError as exc:
            raise CaseFailure(rve_id, rid, exc) from exc
    return points


def build_surface(
    rves: Sequence[tuple[Microstructure, int]],
    grid: LoadGrid = LoadGrid(),
    materials: Mapping[Phase, Material] = None,
    *,
    rve_ids: Sequence[str] | None = None,
    workers: int | None = 1,
    chunk_size: int = 64,
) -> FailureSurface:
    """One failure point per (RVE, load case).

    Load cases are split into fixed-size chunks that run on a thread pool;
    the chunking does not depend on ``workers`` and results are collected in
    (RVE, case) order, so the output is identical for any pool size.
    """
    materials = dict(DEFAULT_MATERIALS if materials is None else materials)
    if rve_ids is None:
        rve_ids = [str(ms.seed) for ms, _ in rves]
    if len(rve_ids) != len(rves) or len(set(rve_ids)) != len(rve_ids):
        raise ValueError("rve_ids must be unique, one per RVE")
    cases = enumerate_load_cases(grid)

    models = []
    for ms, divisions in rves:
        models.append(RVEModel(pixelate(ms, divisions), materials).prepare(("roller", "rigid")))

    jobs = [
        (m, rid, start)
        for m, rid in zip(models, rve_ids)
        for start in range(0, len(cases), chunk_size)
    ]
    with ThreadPoolExecutor(max_workers=workers or None) as pool:
        futures = [
            pool.submit(_solve_chunk, m, materials, rid, cases[s : s + chunk_size], s)
            for m, rid, s in jobs
        ]
        points = [p for fut in futures for p in fut.result()]

    provenance = {
        "grid": asdict(grid),
        "rves": [
            {"rve_id": rid, "seed": ms.seed, "window_px": ms.window_px,
             "achieved_vf": ms.achieved_vf, "divisions": d}
            for rid, (ms, d) in zip(rve_ids, rves)
        ],
        "materials": {Phase(p).name.lower(): asdict(m) for p, m in materials.items()},
    }
    return FailureSurface(tuple(points), provenance)


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------


def export_csv(surface: FailureSurface, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in surface.points:
            w.writerow([p.rve_id, p.run_id, *(repr(float(v)) for v in p.stress), p.mode.value, repr(p.s_f)])


def import_csv(path) -> FailureSurface:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(field.strip() for field in rows[0]):
        raise EmptySurface(f"{path} is empty")
    if [h.strip() for h in rows[0]] != CSV_HEADER:
        raise SchemaError(f"expected header {','.join(CSV_HEADER)}", line=1)
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=lineno)
        try:
            stress = StressTensor4(*(float(v) for v in row[2:6]))
            mode = FailureMode(row[6].strip())
            s_f = float(row[7])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not (s_f > 0 and all(map(math.isfinite, stress))):
            raise ParseError("s_f must be positive and stresses finite", line=lineno)
        points.append(FailurePoint(stress, mode, s_f, row[0], row[1]))
    if not points:
        raise EmptySurface(f"{path} has a header but no points")
    return FailureSurface(tuple(points), {"source": str(path)})
