"""Periodic two-phase microstructures of equal circular fibers in a square window.

Geometry is kept analytic: an inclusion is a center and a radius in pixel
units, and membership queries use the minimum-image (torus) distance, so an
inclusion crossing an edge of the window wraps around to the opposite side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ParseError, VfUnreachable

#: Densest packing of equal circles in the plane.
HEX_PACKING_LIMIT = math.pi / (2.0 * math.sqrt(3.0))

#: 5 um filament diameter at 0.16 um per pixel.
DEFAULT_RADIUS_PX = 15.6

#: At or below this target the generator uses random sequential addition.
RSA_MAX_VF = 0.5


class Phase(IntEnum):
    MATRIX = 0
    FIBER = 1


@dataclass(frozen=True)
class MicrostructureSpec:
    """Request for :func:`generate`.

    ``vf_tol`` bounds ``|achieved_vf - target_vf|``; with equal radii the
    achievable fractions are quantized in steps of ``pi r^2 / W^2``.
    """

    window_px: int
    target_vf: float
    radius_px: float = DEFAULT_RADIUS_PX
    min_gap_px: float = 1.0
    rng_seed: int = 0
    vf_tol: float = 0.01

    def __post_init__(self):
        if int(self.window_px) != self.window_px or self.window_px <= 0:
            raise ValueError(f"window_px must be a positive integer, got {self.window_px}")
        if not 0.0 <= self.target_vf < 1.0:
            raise ValueError(f"target_vf must lie in [0, 1), got {self.target_vf}")
        if self.radius_px < 1.0:
            raise ValueError(f"radius_px must be >= 1, got {self.radius_px}")
        if self.min_gap_px < 0.0:
            raise ValueError(f"min_gap_px must be >= 0, got {self.min_gap_px}")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be unsigned")
        if self.vf_tol <= 0.0:
            raise ValueError("vf_tol must be positive")


@dataclass(frozen=True)
class Microstructure:
    window_px: int
    inclusions: tuple[tuple[float, float, float], ...]
    achieved_vf: float
    seed: int

    @property
    def centers(self) -> np.ndarray:
        if not self.inclusions:
            return np.zeros((0, 2))
        return np.array([(cx, cy) for cx, cy, _ in self.inclusions], dtype=float)

    @property
    def radii(self) -> np.ndarray:
        return np.array([r for _, _, r in self.inclusions], dtype=float)

    def __len__(self) -> int:
        return len(self.inclusions)


def torus_delta(a, b, window):
    """Minimum-image absolute coordinate difference on a periodic interval."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % window
    return np.minimum(d, window - d)


def torus_distance(p, q, window):
    """Minimum-image Euclidean distance; broadcasts over leading axes."""
    d = torus_delta(p, q, window)
    return np.hypot(d[..., 0], d[..., 1])


def inclusion_area_fraction(window_px: int, radii) -> float:
    radii = np.asarray(radii, dtype=float)
    return float(np.sum(np.pi * radii**2) / float(window_px) ** 2)


def min_surface_gap(ms: Microstructure) -> float:
    """Smallest ``torus distance - r_i - r_j`` over all pairs (inf if < 2 inclusions)."""
    c, r = ms.centers, ms.radii
    if len(c) < 2:
        return math.inf
    d = torus_distance(c[:, None, :], c[None, :, :], ms.window_px)
    gap = d - r[:, None] - r[None, :]
    iu = np.triu_indices(len(c), k=1)
    return float(gap[iu].min())


# ----------------------------------------------------------------------------
# placement
# ----------------------------------------------------------------------------


def _fits(centers: np.ndarray, candidate: np.ndarray, clearance: float, window: float) -> bool:
    if len(centers) == 0:
        return True
    return bool(torus_distance(centers, candidate, window).min() >= clearance)


def _sequential_addition(n, window, clearance, rng, budget_per_inclusion=2000):
    centers = np.zeros((0, 2))
    attempts = 0
    budget = budget_per_inclusion * max(n, 1)
    while len(centers) < n:
        if attempts >= budget:
            return None
        attempts += 1
        cand = rng.uniform(0.0, window, size=2)
        if _fits(centers, cand, clearance, window):
            centers = np.vstack([centers, cand])
    return centers


def _lattice(nrows, ncols, window, staggered):
    dx, dy = window / ncols, window / nrows
    pts = []
    for j in range(nrows):
        shift = 0.5 * dx if (staggered and j % 2) else 0.0
        for i in range(ncols):
            pts.append(((i + 0.5) * dx + shift, (j + 0.5) * dy))
    return np.array(pts) % window


def _lattice_min_spacing(pts, window):
    if len(pts) < 2:
        return float(window)
    d = torus_distance(pts[:, None, :], pts[None, :, :], window)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def _best_lattice(n, window):
    """Periodic lattice with at least ``n`` sites and the widest spacing.

    Staggered rows approximate a hexagonal lattice; an even row count keeps
    the stagger periodic.
    """
    best, best_key = None, None
    top = int(math.ceil(math.sqrt(2.0 * n))) + 3
    for nrows in range(1, top + 1):
        for ncols in range(1, top + 1):
            if not n <= nrows * ncols <= 2 * n + 4:
                continue
            for staggered in (False, True):
                if staggered and nrows % 2:
                    continue
                pts = _lattice(nrows, ncols, window, staggered)
                key = (_lattice_min_spacing(pts, window), -nrows * ncols)
                if best_key is None or key > best_key:
                    best, best_key = pts, key
    return best, best_key[0]


def _jitter(centers, window, clearance, rng, sweeps=150):
    """Hard-disk Monte Carlo moves that keep every pairwise clearance."""
    n = len(centers)
    if n == 0:
        return centers
    step = 0.5 * clearance
    for _ in range(sweeps):
        accepted = 0
        for i in rng.permutation(n):
            cand = (centers[i] + rng.uniform(-step, step, size=2)) % window
            others = np.delete(centers, i, axis=0)
            if _fits(others, cand, clearance, window):
                centers[i] = cand
                accepted += 1
        rate = accepted / n
        if rate < 0.3:
            step *= 0.7
        elif rate > 0.5:
            step = min(step * 1.3, 0.5 * window)
    return centers


def _lattice_placement(n, window, clearance, rng):
    sites, spacing = _best_lattice(n, window)
    if spacing < clearance:
        return None
    keep = np.sort(rng.choice(len(sites), size=n, replace=False))
    centers = (sites[keep] + rng.uniform(0.0, window, size=2)) % window
    return _jitter(centers, window, clearance, rng)


def generate(spec: MicrostructureSpec) -> Microstructure:
    """Place equal circles on the torus until the target area fraction is met.

    Targets up to 0.5 use random sequential addition (with the lattice route
    as a fallback when the attempt budget runs out); denser targets start from
    a jittered near-hexagonal lattice, since sequential addition jams around
    0.55.
    """
    W, r = spec.window_px, float(spec.radius_px)
    if spec.target_vf >= HEX_PACKING_LIMIT:
        raise VfUnreachable(
            f"target_vf={spec.target_vf} exceeds the hexagonal packing limit {HEX_PACKING_LIMIT:.4f}"
        )
    cell_area = math.pi * r * r
    n = int(round(spec.target_vf * W * W / cell_area))
    achieved = n * cell_area / (W * W)
    if abs(achieved - spec.target_vf) > spec.vf_tol:
        raise VfUnreachable(
            f"radius {r} px in a {W} px window quantizes vf in steps of {cell_area / W**2:.4f}; "
            f"nearest achievable is {achieved:.4f}"
        )
    if n and 2.0 * r >= W:
        raise VfUnreachable(f"inclusion diameter {2 * r} does not fit in window {W}")

    rng = np.random.default_rng(spec.rng_seed)
    clearance = 2.0 * r + spec.min_gap_px
    centers = None
    if n == 0:
        centers = np.zeros((0, 2))
    elif spec.target_vf <= RSA_MAX_VF:
        centers = _sequential_addition(n, W, clearance, rng)
    if centers is None:
        centers = _lattice_placement(n, W, clearance, rng)
    if centers is None:
        raise VfUnreachable(f"cannot place {n} inclusions of radius {r} with gap {spec.min_gap_px}")

    inclusions = tuple((float(cx), float(cy), r) for cx, cy in centers)
    return Microstructure(W, inclusions, inclusion_area_fraction(W, [r] * n), spec.rng_seed)


# ----------------------------------------------------------------------------
# queries
# ----------------------------------------------------------------------------


def fiber_mask(ms: Microstructure, x, y) -> np.ndarray:
    """Boolean array, True where (x, y) lies inside some inclusion."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    W = ms.window_px
    for cx, cy, r in ms.inclusions:
        dx = torus_delta(x, cx, W)
        dy = torus_delta(y, cy, W)
        out |= dx * dx + dy * dy <= r * r
    return out


def phase_at(ms: Microstructure, x: float, y: float) -> Phase:
    return Phase.FIBER if bool(fiber_mask(ms, x, y)) else Phase.MATRIX


# ----------------------------------------------------------------------------
# text format
# ----------------------------------------------------------------------------


def _fmt(value: float) -> str:
    # shortest round-trip repr, padded to at least 6 significant digits
    s = repr(float(value))
    mantissa = s.lower().split("e")[0].lstrip("-").replace(".", "").lstrip("0")
    if len(mantissa) < 6:
        return format(float(value), "#.6g")
    return s


def write_text(ms: Microstructure, path) -> None:
    lines = [f"W {ms.window_px} VF {_fmt(ms.achieved_vf)} SEED {ms.seed}"]
    lines += [f"C {_fmt(cx)} {_fmt(cy)} {_fmt(r)}" for cx, cy, r in ms.inclusions]
    Path(path).write_text("\n".join(lines) + "\n")


def read_text(path) -> Microstructure:
    header = None
    inclusions = []
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if header is None:
            if len(tokens) != 6 or tokens[0::2] != ["W", "VF", "SEED"]:
                raise ParseError("expected header 'W <int> VF <real> SEED <int>'", lineno)
            try:
                header = (int(tokens[1]), float(tokens[3]), int(tokens[5]))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if header[0] <= 0 or header[2] < 0:
                raise ParseError("window and seed must be non-negative integers", lineno)
            continue
        if tokens[0] != "C" or len(tokens) != 4:
            raise ParseError("expected 'C <cx> <cy> <r>'", lineno)
        try:
            cx, cy, r = (float(t) for t in tokens[1:])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        W = header[0]
        if not (0.0 <= cx < W and 0.0 <= cy < W):
            raise ParseError(f"center ({cx}, {cy}) outside [0, {W})", lineno)
        if not 0.0 < r < W / 2.0:
            raise ParseError(f"radius {r} outside (0, {W / 2})", lineno)
        for (px, py, pr), prow in zip(inclusions, rows):
            if float(torus_distance(np.array([px, py]), np.array([cx, cy]), W)) < pr + r:
                raise ParseError(f"inclusion overlaps the one on line {prow}", lineno)
        inclusions.append((cx, cy, r))
        rows.append(lineno)
    if header is None:
        raise ParseError("missing header", 1)
    W, vf, seed = header
    expected = inclusion_area_fraction(W, [r for *_, r in inclusions])
    if not math.isclose(vf, expected, rel_tol=1e-6, abs_tol=1e-9):
        raise ParseError(f"VF {vf} disagrees with inclusion area fraction {expected}", 1)
    return Microstructure(W, tuple(inclusions), vf, seed)
