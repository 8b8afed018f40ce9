"""Linear-region atlases on 2-d input slices.

A scalar ReLU network is piecewise linear, and every piece is a convex
polyhedron with one activation pattern. This module samples a 2-d slice
of input space on a regular grid, groups grid cells by the pattern at
their centers, and renders the result as an SVG heatmap of per-region
slopes, optionally overlaid with the pattern-combination bounds from
``region_algebra``.

Grid sampling misses regions thinner than a cell, so the atlas is an
audit surface, not exact polytope geometry; ``convergence_check``
reports whether one resolution doubling leaves the region count stable.
Grid cells carrying the same pattern are merged into one region even
when they look disconnected on the slice: a true region is convex, so
an apparent split can only be a discretization artifact of the grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lipschitz import local_lipschitz
from .network import ActivationPattern, forward_many
from .region_algebra import basis_pursuit

ORTHO_TOL = 1e-10


@dataclass
class SlicePlane:
    """Affine 2-d slice of input space with a sampling grid.

    Points on the slice are origin + u * axes[0] + v * axes[1] with
    (u, v) ranging over extent = (u_min, u_max, v_min, v_max). The grid
    has resolution = (g_u, g_v) cells; patterns are evaluated at cell
    centers.
    """

    origin: np.ndarray
    axes: np.ndarray
    extent: tuple
    resolution: tuple = (400, 400)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).ravel()
        self.axes = np.asarray(self.axes, dtype=np.float64)
        if self.axes.shape != (2, self.origin.size):
            raise ValueError("axes must be two vectors of the input dimension")
        g = self.axes @ self.axes.T
        if np.abs(g - np.eye(2)).max() > ORTHO_TOL:
            raise ValueError("axes must be orthonormal")
        self.extent = tuple(float(e) for e in self.extent)
        if len(self.extent) != 4:
            raise ValueError("extent must be (u_min, u_max, v_min, v_max)")
        u0, u1, v0, v1 = self.extent
        if not (u0 < u1 and v0 < v1):
            raise ValueError("extent must have positive area")
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))
        if min(self.resolution) < 2:
            raise ValueError("resolution must be at least 2 per axis")

    @classmethod
    def axis_aligned(cls, extent=(-2.0, 2.0, -2.0, 2.0), resolution=(400, 400),
                     n_input=2, origin=None):
        """Slice spanned by the first two coordinate directions."""
        if n_input < 2:
            raise ValueError("need at least two input dimensions")
        axes = np.zeros((2, n_input))
        axes[0, 0] = 1.0
        axes[1, 1] = 1.0
        if origin is None:
            origin = np.zeros(n_input)
        return cls(origin, axes, extent, resolution)

    def doubled(self):
        g_u, g_v = self.resolution
        return SlicePlane(self.origin, self.axes, self.extent,
                          (2 * g_u, 2 * g_v))

    def cell_centers_uv(self):
        """(g_u * g_v, 2) slice coordinates of cell centers, u-major."""
        u0, u1, v0, v1 = self.extent
        g_u, g_v = self.resolution
        us = u0 + (np.arange(g_u) + 0.5) * (u1 - u0) / g_u
        vs = v0 + (np.arange(g_v) + 0.5) * (v1 - v0) / g_v
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        return np.column_stack([uu.ravel(), vv.ravel()])

    def to_input(self, uv):
        """Map (m, 2) slice coordinates to input-space points."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        return self.origin + uv @ self.axes

    def project(self, X):
        """Slice coordinates of input-space points (orthogonal projection)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return (X - self.origin) @ self.axes.T


@dataclass
class RegionCell:
    """One linear region as seen by the grid: all cells with one pattern."""

    pattern: ActivationPattern
    pattern_hash: str
    members: np.ndarray
    lam: float
    contains_training_point: bool = False
    theorem2_bound: float = None
    theorem2_status: str = None

    @property
    def cell_count(self):
        return int(self.members.shape[0])


def scan_regions(net, plane, pm=None, solve_budget=None):
    """Group grid cells by activation pattern and bound the empty ones.

    Returns RegionCells in raster order of first appearance. With a
    PatternMatrix, a region whose pattern matches a training column is
    marked occupied; the rest get a basis-pursuit bound (feasible) or
    are marked infeasible, largest regions first until solve_budget
    solves have been spent (None = no cap).
    """
    g_u, g_v = plane.resolution
    centers = plane.to_input(plane.cell_centers_uv())
    _, masks = forward_many(net, centers)
    n = centers.shape[0]
    if masks:
        stacked = np.concatenate([m for m in masks], axis=1)
        keys = [stacked[i].tobytes() for i in range(n)]
    else:
        keys = [b""] * n

    order = {}
    groups = {}
    for i, key in enumerate(keys):
        if key not in order:
            order[key] = len(order)
            groups[key] = []
        groups[key].append(i)

    train_keys = set()
    if pm is not None:
        train_keys = {p.key() for p in pm.patterns}

    cells = []
    for key in sorted(order, key=order.get):
        flat = np.array(groups[key], dtype=int)
        rep = int(flat[0])
        pattern = ActivationPattern(tuple(m[rep] for m in masks))
        members = np.column_stack([flat // g_v, flat % g_v])
        occupied = pattern.key() in train_keys
        cells.append(RegionCell(
            pattern=pattern,
            pattern_hash=pattern.digest(),
            members=members,
            lam=local_lipschitz(net, centers[rep]),
            contains_training_point=occupied,
            theorem2_status="occupied" if occupied else None,
        ))

    if pm is not None:
        empty = [c for c in cells if not c.contains_training_point]
        empty.sort(key=lambda c: (-c.cell_count, c.pattern_hash))
        if solve_budget is not None:
            empty = empty[: int(solve_budget)]
        for cell in empty:
            sol = basis_pursuit(pm, cell.pattern.flatten())
            if sol.status == "optimal":
                cell.theorem2_status = "feasible"
                cell.theorem2_bound = sol.bound
            else:
                cell.theorem2_status = "infeasible"
    return cells


@dataclass
class ConvergenceReport:
    converged: bool
    count: int
    count_doubled: int


def convergence_check(net, plane):
    """Is the region count stable under one resolution doubling?"""
    count = len(scan_regions(net, plane))
    count_doubled = len(scan_regions(net, plane.doubled()))
    return ConvergenceReport(count == count_doubled, count, count_doubled)


# ===== Rendering =====

# Ten evenly spaced stops of the viridis palette, interpolated linearly.
_VIRIDIS = [
    (68, 1, 84), (72, 40, 120), (62, 73, 137), (49, 104, 142),
    (38, 130, 142), (31, 158, 137), (53, 183, 121), (110, 206, 88),
    (181, 222, 43), (253, 231, 37),
]


def _viridis_hex(frac):
    frac = min(max(float(frac), 0.0), 1.0)
    pos = frac * (len(_VIRIDIS) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(_VIRIDIS) - 1)
    w = pos - lo
    rgb = [round((1 - w) * a + w * b) for a, b in zip(_VIRIDIS[lo], _VIRIDIS[hi])]
    return "#%02x%02x%02x" % tuple(rgb)


def _boundary_lines(label, g_u, g_v):
    """Merged hairline segments between cells of differing regions."""
    lines = []
    for i in range(g_u - 1):
        j = 0
        while j < g_v:
            if label[i, j] != label[i + 1, j]:
                j0 = j
                while j < g_v and label[i, j] != label[i + 1, j]:
                    j += 1
                # v axis is flipped: row j renders at y = g_v - 1 - j
                lines.append((i + 1, g_v - j, i + 1, g_v - j0))
            else:
                j += 1
    for j in range(g_v - 1):
        i = 0
        while i < g_u:
            if label[i, j] != label[i, j + 1]:
                i0 = i
                while i < g_u and label[i, j] != label[i, j + 1]:
                    i += 1
                lines.append((i0, g_v - 1 - j, i, g_v - 1 - j))
            else:
                i += 1
    return lines


def emit_svg(cells, plane, dataset_projection=None, mode="lambda",
             color_scale=None):
    """Render one scan as a deterministic SVG heatmap.

    mode "lambda" colors every cell by its region's slope; mode "bound"
    colors by the pattern-combination bound, with occupied regions white
    and regions the solve cannot reach black. dataset_projection holds
    (u, v) slice coordinates of training points, drawn as dots.
    color_scale fixes (vmin, vmax); by default the scale spans the
    finite values present.
    """
    if mode not in ("lambda", "bound"):
        raise ValueError("mode must be lambda or bound")
    g_u, g_v = plane.resolution

    values = {}
    for idx, cell in enumerate(cells):
        if mode == "lambda":
            values[idx] = ("value", cell.lam)
        elif cell.theorem2_status == "occupied":
            values[idx] = ("white", None)
        elif cell.theorem2_bound is not None:
            values[idx] = ("value", cell.theorem2_bound)
        else:
            values[idx] = ("black", None)

    finite = [v for kind, v in values.values() if kind == "value"]
    if color_scale is not None:
        vmin, vmax = float(color_scale[0]), float(color_scale[1])
    else:
        vmin = 0.0
        vmax = max(finite) if finite else 1.0
    span = vmax - vmin if vmax > vmin else 1.0

    fills = {}
    for idx, (kind, v) in values.items():
        if kind == "white":
            fills[idx] = "#ffffff"
        elif kind == "black":
            fills[idx] = "#000000"
        else:
            fills[idx] = _viridis_hex((v - vmin) / span)

    out = []
    out.append(
        '<svg xmlns="http://www.w3.org/2000/svg" width="640" height="%d" '
        'viewBox="-0.5 -0.5 %d %d">' % (round(640 * g_v / g_u), g_u + 1, g_v + 1))
    out.append('<g shape-rendering="crispEdges" stroke="none">')
    label = np.full((g_u, g_v), -1, dtype=int)
    for idx, cell in enumerate(cells):
        label[cell.members[:, 0], cell.members[:, 1]] = idx
    for i in range(g_u):
        for j in range(g_v):
            idx = label[i, j]
            if idx < 0:
                continue
            out.append('<rect x="%d" y="%d" width="1" height="1" fill="%s"/>'
                       % (i, g_v - 1 - j, fills[idx]))
    out.append('</g>')

    out.append('<g stroke="#1a1a1a" stroke-width="0.12" stroke-linecap="square">')
    for x0, y0, x1, y1 in _boundary_lines(label, g_u, g_v):
        out.append('<line x1="%d" y1="%d" x2="%d" y2="%d"/>' % (x0, y0, x1, y1))
    out.append('</g>')

    if dataset_projection is not None:
        uv = np.atleast_2d(np.asarray(dataset_projection, dtype=np.float64))
        u0, u1, v0, v1 = plane.extent
        r = max(g_u, g_v) / 120.0
        out.append('<g fill="#ff5252" stroke="#7f1d1d" stroke-width="%.3f">'
                   % (r / 4))
        for u, v in uv:
            if not (u0 <= u <= u1 and v0 <= v <= v1):
                continue
            gx = (u - u0) / (u1 - u0) * g_u
            gy = g_v - (v - v0) / (v1 - v0) * g_v
            out.append('<circle cx="%.4f" cy="%.4f" r="%.3f"/>' % (gx, gy, r))
        out.append('</g>')

    out.append('<rect x="0" y="0" width="%d" height="%d" fill="none" '
               'stroke="#1a1a1a" stroke-width="0.25"/>' % (g_u, g_v))
    out.append('</svg>')
    return "\n".join(out) + "\n"


def write_regions_csv(cells, path):
    """regions.csv: one row per RegionCell, scan order preserved."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pattern_hash", "cell_count", "lambda", "occupied",
                    "bound", "status"])
        for cell in cells:
            w.writerow([
                cell.pattern_hash,
                cell.cell_count,
                repr(float(cell.lam)),
                int(cell.contains_training_point),
                "" if cell.theorem2_bound is None else repr(float(cell.theorem2_bound)),
                "" if cell.theorem2_status is None else cell.theorem2_status,
            ])
