"""Staggered-grid geometry: the computational box, voxel regions, boundary
patches and the covering constructions (chains of balls, cube tessellations)
used by the propagation experiments.

Conventions.  The box spans ``origin + [0, n*h]^3`` and is split into
``n = (nx, ny, nz)`` cubic cells of side ``h``.  Electric degrees of freedom
sit at edge midpoints (tangential component along the edge), magnetic ones at
face centers (normal component).  Flat dof indices enumerate the x, y, z
families in that order, C-ordered within each family.  All geometry values
are immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DegenerateRegionError, GeometryError

_SIDES = ("x-", "x+", "y-", "y+", "z-", "z+")

# 6-connectivity structuring element for flood fills.
_CONN6 = ndimage.generate_binary_structure(3, 1)


def _ravel(shape, i, j, k):
    return (i * shape[1] + j) * shape[2] + k


class Grid:
    """Uniform staggered grid over an axis-aligned box.

    Exposes the edge/face dof bookkeeping needed by the solver: per-family
    shapes, flat-index offsets, midpoint coordinates and the boundary split
    of the electric dofs.
    """

    def __init__(self, n, h, origin=(0.0, 0.0, 0.0)):
        n = tuple(int(v) for v in n)
        if len(n) != 3 or any(v < 4 for v in n):
            raise ConfigurationError(f"grid needs at least 4 cells per axis, got {n}")
        if not (h > 0):
            raise ConfigurationError(f"grid spacing must be positive, got {h}")
        self.n = n
        self.h = float(h)
        self.origin = np.asarray(origin, dtype=float)
        if self.origin.shape != (3,):
            raise ConfigurationError("origin must be a 3-vector")
        nx, ny, nz = n
        self.edge_shapes = ((nx, ny + 1, nz + 1), (nx + 1, ny, nz + 1), (nx + 1, ny + 1, nz))
        self.face_shapes = ((nx + 1, ny, nz), (nx, ny + 1, nz), (nx, ny, nz + 1))
        self.edge_counts = tuple(int(np.prod(s)) for s in self.edge_shapes)
        self.face_counts = tuple(int(np.prod(s)) for s in self.face_shapes)
        self.edge_offsets = (0, self.edge_counts[0], self.edge_counts[0] + self.edge_counts[1])
        self.face_offsets = (0, self.face_counts[0], self.face_counts[0] + self.face_counts[1])
        self.n_edges = sum(self.edge_counts)
        self.n_faces = sum(self.face_counts)
        self.n_cells = nx * ny * nz

    # -- dof indexing -----------------------------------------------------

    def edge_index(self, axis, i, j, k):
        """Flat index of the edge dof of direction ``axis`` at grid slot (i, j, k)."""
        return self.edge_offsets[axis] + _ravel(self.edge_shapes[axis], i, j, k)

    def face_index(self, axis, i, j, k):
        return self.face_offsets[axis] + _ravel(self.face_shapes[axis], i, j, k)

    def edge_axis_of(self, flat):
        flat = np.asarray(flat)
        return np.searchsorted(
            [self.edge_offsets[1], self.edge_offsets[2]], flat, side="right"
        )

    def _family_grids(self, shapes, half_axis):
        """Midpoints of one staggered family; ``half_axis`` gets the +1/2 shift."""
        out = []
        for axis in range(3):
            shape = shapes[axis]
            idx = np.indices(shape, dtype=float)
            coords = [idx[d] for d in range(3)]
            shift = half_axis(axis)
            for d in range(3):
                coords[d] = (coords[d] + (0.5 if d in shift else 0.0)) * self.h
                coords[d] += self.origin[d]
            out.append(np.stack(coords, axis=-1).reshape(-1, 3))
        return np.concatenate(out, axis=0)

    def edge_midpoints(self):
        """(n_edges, 3) midpoint coordinates, family-ordered."""
        return self._family_grids(self.edge_shapes, lambda a: (a,))

    def face_centers(self):
        return self._family_grids(self.face_shapes, lambda a: tuple(d for d in range(3) if d != a))

    def cell_centers(self):
        nx, ny, nz = self.n
        idx = np.indices((nx, ny, nz), dtype=float)
        pts = np.stack([(idx[d] + 0.5) * self.h + self.origin[d] for d in range(3)], axis=-1)
        return pts.reshape(-1, 3)

    def edge_components(self):
        """Direction (0, 1, 2) of every edge dof."""
        return np.repeat(np.arange(3), self.edge_counts)

    def face_components(self):
        return np.repeat(np.arange(3), self.face_counts)

    # -- boundary split ---------------------------------------------------

    def boundary_edge_mask(self):
        """True for edges lying in a boundary plane (tangential trace dofs)."""
        nx, ny, nz = self.n
        masks = []
        for axis in range(3):
            shape = self.edge_shapes[axis]
            t1, t2 = (axis + 1) % 3, (axis + 2) % 3
            idx = np.indices(shape)
            m = (idx[t1] == 0) | (idx[t1] == self.n[t1]) | (idx[t2] == 0) | (idx[t2] == self.n[t2])
            masks.append(m.reshape(-1))
        return np.concatenate(masks)

    def interior_edge_indices(self):
        return np.flatnonzero(~self.boundary_edge_mask())

    def boundary_edge_indices(self):
        return np.flatnonzero(self.boundary_edge_mask())

    def edge_cell_adjacency_weights(self, mask):
        """Per-edge count of adjacent cells inside ``mask``, divided by 4.

        Used for the diagonal L2 quadrature on edge dofs: an interior edge
        touches 4 cells and carries weight h^3 when all of them are inside.
        """
        counts = np.zeros(self.n_edges)
        padded = np.zeros((self.n[0] + 2, self.n[1] + 2, self.n[2] + 2))
        padded[1:-1, 1:-1, 1:-1] = mask
        for axis in range(3):
            t1, t2 = (axis + 1) % 3, (axis + 2) % 3
            shape = self.edge_shapes[axis]
            acc = np.zeros(shape)
            for d1 in (0, 1):
                for d2 in (0, 1):
                    sl = [slice(1, -1)] * 3
                    sl[t1] = slice(d1, d1 + shape[t1])
                    sl[t2] = slice(d2, d2 + shape[t2])
                    acc += padded[tuple(sl)]
            lo = self.edge_offsets[axis]
            counts[lo:lo + self.edge_counts[axis]] = acc.reshape(-1)
        return counts / 4.0

    def face_cell_adjacency_weights(self, mask):
        """Per-face count of adjacent cells inside ``mask``, divided by 2."""
        counts = np.zeros(self.n_faces)
        padded = np.zeros((self.n[0] + 2, self.n[1] + 2, self.n[2] + 2))
        padded[1:-1, 1:-1, 1:-1] = mask
        for axis in range(3):
            shape = self.face_shapes[axis]
            acc = np.zeros(shape)
            for d in (0, 1):
                sl = [slice(1, -1)] * 3
                sl[axis] = slice(d, d + shape[axis])
                acc += padded[tuple(sl)]
            lo = self.face_offsets[axis]
            counts[lo:lo + self.face_counts[axis]] = acc.reshape(-1)
        return counts / 2.0

    # -- provenance -------------------------------------------------------

    def key(self):
        return ("grid", self.n, self.h, tuple(self.origin.tolist()))

    def __repr__(self):
        return f"Grid(n={self.n}, h={self.h:g}, origin={tuple(self.origin)})"


class Region:
    """A voxel set inside the grid box with a role tag."""

    ROLES = ("omega", "subdomain_A", "exclusion_D", "probe_G", "ball", "margin")

    def __init__(self, grid: Grid, mask, role="omega"):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.n:
            raise ConfigurationError(f"mask shape {mask.shape} != grid cells {grid.n}")
        if not mask.any():
            raise DegenerateRegionError("region mask is empty")
        if role not in self.ROLES:
            raise ConfigurationError(f"unknown region role {role!r}")
        self.grid = grid
        self.mask = mask
        self.mask.flags.writeable = False
        self.role = role
        if role == "subdomain_A" and not self.is_compactly_contained():
            raise GeometryError("subdomain_A must keep one cell of wall clearance")

    def volume(self):
        return float(self.mask.sum()) * self.grid.h ** 3

    def cell_count(self):
        return int(self.mask.sum())

    def is_compactly_contained(self):
        """True when the mask keeps at least one cell of clearance from the box walls."""
        m = self.mask
        return not (m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any()
                    or m[:, :, 0].any() or m[:, :, -1].any())

    def complement_connected(self):
        """6-neighbor connectivity of the complement voxel set within the box."""
        comp = ~self.mask
        if not comp.any():
            return False
        _, count = ndimage.label(comp, structure=_CONN6)
        return count == 1

    def key(self):
        return ("region", self.role, _mask_digest(self.mask))

    def __repr__(self):
        return f"Region(role={self.role!r}, cells={self.cell_count()})"


def _mask_digest(mask):
    return int(np.frombuffer(np.packbits(mask.ravel()).tobytes(), dtype=np.uint8).sum()
               + 1000003 * mask.sum())


def build_grid(n, h, origin=(0.0, 0.0, 0.0)) -> Grid:
    """Construct the staggered grid; rejects axes below the 4-cell minimum."""
    return Grid(n, h, origin)


def _shape_predicate(grid: Grid, spec):
    centers = grid.cell_centers()
    kind = spec.get("kind")
    if kind == "ball":
        c = np.asarray(spec["center"], dtype=float)
        r = float(spec["r"])
        return np.linalg.norm(centers - c, axis=1) < r
    if kind == "box":
        lo = np.asarray(spec["lo"], dtype=float)
        hi = np.asarray(spec["hi"], dtype=float)
        return np.all((centers >= lo) & (centers <= hi), axis=1)
    if kind == "union":
        parts = [_shape_predicate(grid, s) for s in spec["parts"]]
        return np.logical_or.reduce(parts)
    if kind == "intersection":
        parts = [_shape_predicate(grid, s) for s in spec["parts"]]
        return np.logical_and.reduce(parts)
    if kind == "complement":
        return ~_shape_predicate(grid, spec["part"])
    raise ConfigurationError(f"unknown shape kind {kind!r}")


def carve_region(grid: Grid, shape, role="omega") -> Region:
    """Voxelize a shape spec by the cell-center membership test."""
    flat = _shape_predicate(grid, shape)
    mask = flat.reshape(grid.n)
    if not mask.any():
        raise DegenerateRegionError(f"shape {shape.get('kind')!r} selects no cells")
    return Region(grid, mask, role=role)


def _surface_distance(grid: Grid, mask):
    """Distance from cell centers to the region's boundary surface.

    Euclidean distance transform against the complement (with a padding ring
    standing in for the outside of the box), corrected by h/2 so that
    axis-aligned walls are measured to the wall plane, not to the neighbor
    cell center.
    """
    padded = np.zeros((grid.n[0] + 2, grid.n[1] + 2, grid.n[2] + 2), dtype=bool)
    padded[1:-1, 1:-1, 1:-1] = mask
    dist = ndimage.distance_transform_edt(padded, sampling=grid.h)
    return dist[1:-1, 1:-1, 1:-1] - grid.h / 2.0


def interior_margin(region: Region, r) -> Region:
    """Cells of the region whose distance to its boundary exceeds ``r``."""
    if not (r > 0):
        raise ConfigurationError("margin must be positive")
    dist = _surface_distance(region.grid, region.mask)
    mask = region.mask & (dist > r)
    if not mask.any():
        raise DegenerateRegionError(f"margin {r:g} empties the region")
    return Region(region.grid, mask, role="margin")


def _side_frame(grid: Grid, side):
    """(normal axis, tangential axes, boundary plane index) of one box side."""
    axis = "xyz".index(side[0])
    t1, t2 = [d for d in range(3) if d != axis]
    plane = 0 if side[1] == "-" else grid.n[axis]
    return axis, t1, t2, plane


def _face_edges(grid: Grid, side, a, b):
    """The four tangential edge dofs of boundary face (a, b) on ``side``."""
    axis, t1, t2, plane = _side_frame(grid, side)
    out = []
    for (direction, i1, i2) in ((t1, a, b), (t1, a, b + 1), (t2, a, b), (t2, a + 1, b)):
        coords = [0, 0, 0]
        coords[axis] = plane
        coords[t1], coords[t2] = i1, i2
        out.append(int(grid.edge_index(direction, *coords)))
    return out


class BoundaryPatch:
    """A set of boundary faces on one or more box sides plus their tangential edges.

    ``face_slots`` are (side, t1, t2) entries; ``edge_dofs`` lists the flat
    indices of every tangential edge of those faces, ``edge_area`` the
    h^2-weighted area share each edge carries, and ``home_side`` the side an
    edge is interior to (edges along lines where sides meet count as rim).
    """

    def __init__(self, grid: Grid, sides, face_slots, edge_dofs, edge_area, rim_mask,
                 home_side):
        self.grid = grid
        self.sides = tuple(sides)
        self.face_slots = face_slots
        self.edge_dofs = np.asarray(edge_dofs, dtype=int)
        self.edge_area = np.asarray(edge_area, dtype=float)
        self.rim_mask = np.asarray(rim_mask, dtype=bool)
        self.home_side = list(home_side)
        for arr in (self.edge_dofs, self.edge_area, self.rim_mask):
            arr.flags.writeable = False

    @property
    def side(self):
        return self.sides[0] if len(self.sides) == 1 else self.sides

    @property
    def n_dofs(self):
        return len(self.edge_dofs)

    def interior_dofs(self):
        """Tangential dofs away from the patch rim (the recorded collar convention)."""
        return self.edge_dofs[~self.rim_mask]

    def select(self, collar="include_rim"):
        if collar == "include_rim":
            return np.arange(self.n_dofs)
        if collar == "exclude_rim":
            return np.flatnonzero(~self.rim_mask)
        raise ConfigurationError(f"unknown collar convention {collar!r}")

    def key(self):
        return ("patch", self.sides, _mask_digest(np.asarray(self.rim_mask)),
                int(self.edge_dofs.sum()), len(self.edge_dofs))

    def __repr__(self):
        return (f"BoundaryPatch(sides={self.sides!r}, faces={len(self.face_slots)}, "
                f"dofs={self.n_dofs})")


def boundary_patch(grid: Grid, side, window=None) -> BoundaryPatch:
    """Collect boundary faces of one side (or a list of sides) inside ``window``.

    ``window`` is a pair (lo, hi) of 2-vectors in the coordinates of the two
    tangential axes of the side (axes other than the normal, in increasing
    order); None takes the whole side, and only a single-side patch may carry
    a window.  Tangential edge dofs are the edges of the selected faces lying
    in the boundary plane; edges interior to a single side's face set count
    as non-rim.
    """
    sides = [side] if isinstance(side, str) else list(side)
    if not sides or len(set(sides)) != len(sides):
        raise ConfigurationError(f"sides must be distinct and nonempty, got {side!r}")
    for s in sides:
        if s not in _SIDES:
            raise ConfigurationError(f"side must be one of {_SIDES}, got {s!r}")
    if window is not None and len(sides) > 1:
        raise ConfigurationError("a window applies to a single-side patch only")

    slots = []
    # per-dof share count within each side separately
    edge_shares = {}
    for s in sides:
        axis, t1, t2, plane = _side_frame(grid, s)
        n1, n2 = grid.n[t1], grid.n[t2]
        s1, s2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
        c1 = (s1 + 0.5) * grid.h + grid.origin[t1]
        c2 = (s2 + 0.5) * grid.h + grid.origin[t2]
        keep = np.ones_like(c1, dtype=bool)
        if window is not None:
            lo, hi = np.asarray(window[0], float), np.asarray(window[1], float)
            keep &= (c1 >= lo[0]) & (c1 <= hi[0]) & (c2 >= lo[1]) & (c2 <= hi[1])
        if not keep.any():
            raise ConfigurationError(f"window {window} misses side {s!r}")
        for a, b in zip(s1[keep].tolist(), s2[keep].tolist()):
            slots.append((s, a, b))
            for dof in _face_edges(grid, s, a, b):
                per_side = edge_shares.setdefault(dof, {})
                per_side[s] = per_side.get(s, 0) + 1

    dofs = np.array(sorted(edge_shares), dtype=int)
    total_shares = np.array([sum(edge_shares[d].values()) for d in dofs], dtype=float)
    area = total_shares * grid.h ** 2 / 4.0
    rim = np.empty(len(dofs), dtype=bool)
    home = []
    for i, d in enumerate(dofs):
        per_side = edge_shares[d]
        best = max(per_side, key=lambda s: (per_side[s], s))
        home.append(best)
        rim[i] = per_side[best] < 2
    return BoundaryPatch(grid, sides, slots, dofs, area, rim, home)


class BallChain:
    """Ball centers generated by the max-parameter stepping rule along a path."""

    def __init__(self, centers, r1, path):
        self.centers = np.asarray(centers, dtype=float)
        self.r1 = float(r1)
        self.r2 = 3.0 * self.r1
        self.r3 = 9.0 * self.r1
        self.path = np.asarray(path, dtype=float)

    @property
    def count(self):
        return len(self.centers)

    def check_invariants(self, host: Region | None = None):
        """Disjointness, nesting and the volume count bound; raises on failure.

        Adjacent centers sit at distance exactly 2*r1 up to roundoff of the
        stepping arithmetic, so those two comparisons carry a guard scaled to
        the coordinate magnitude; every other pair is strict.
        """
        eps = np.finfo(float).eps
        x = self.centers
        n = len(x)
        d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
        scale = float(np.abs(x).max(initial=1.0)) + 2.0 * self.r1
        guard = 64 * eps * scale
        for j in range(n):
            for k in range(j + 1, n):
                tol = guard if k == j + 1 else 0.0
                if d[j, k] < 2.0 * self.r1 - tol:
                    raise GeometryError(f"balls {j},{k} overlap: |x_j-x_k|={d[j, k]:.17g} < 2*r1")
        for k in range(n - 1):
            if d[k, k + 1] + self.r1 > self.r2 + guard:
                raise GeometryError(f"nesting fails at {k}: {d[k, k + 1] + self.r1:.17g} > r2")
        if host is not None:
            bound = host.volume() / ((4.0 * np.pi / 3.0) * self.r1 ** 3) + 1.0
            if n > bound:
                raise GeometryError(f"chain count {n} exceeds volume bound {bound:g}")
        return True


def _segment_sphere_exits(p0, p1, center, radius):
    """Parameters s in [0, 1] along p0->p1 with |p(s) - center| = radius."""
    d = p1 - p0
    f = p0 - center
    a = float(d @ d)
    if a == 0.0:
        return []
    b = 2.0 * float(f @ d)
    c = float(f @ f) - radius * radius
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    sq = np.sqrt(disc)
    out = []
    for s in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
        if 0.0 <= s <= 1.0:
            out.append(s)
    return sorted(out)


def chain_of_balls(path, r1, host: Region) -> BallChain:
    """Step along ``path`` placing centers where the distance to the previous
    center last equals 2*r1 (the largest such parameter), with the proof
    ratios r2 = 3*r1, r3 = 9*r1.

    The path must stay inside the host region eroded by r3; sampled at h/4
    resolution against the voxelized erosion.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[1] != 3 or len(path) < 1:
        raise ConfigurationError("path must be an (m, 3) polyline")
    if not (r1 > 0):
        raise ConfigurationError("r1 must be positive")
    r3 = 9.0 * r1
    grid = host.grid

    eroded = interior_margin(host, r3)
    _require_path_inside(grid, eroded.mask, path)

    seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1) if len(path) > 1 else np.array([])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    centers = [path[0]]
    t_cur = 0.0
    while True:
        xk = centers[-1]
        nxt = None
        # Last crossing: scan segments from the end of the path backwards.
        for si in range(len(path) - 2, -1, -1):
            if cum[si + 1] <= t_cur:
                break
            roots = _segment_sphere_exits(path[si], path[si + 1], xk, 2.0 * r1)
            params = [cum[si] + s * seg_len[si] for s in roots]
            params = [t for t in params if t > t_cur + 1e-12 * max(1.0, cum[-1])]
            if params:
                nxt = max(params)
                break
        if nxt is None:
            break
        t_cur = nxt
        centers.append(_point_at(path, cum, seg_len, t_cur))
    chain = BallChain(np.asarray(centers), r1, path)
    chain.check_invariants(host)
    return chain


def _point_at(path, cum, seg_len, t):
    si = int(np.searchsorted(cum, t, side="right")) - 1
    si = min(max(si, 0), len(seg_len) - 1)
    s = 0.0 if seg_len[si] == 0 else (t - cum[si]) / seg_len[si]
    return path[si] + s * (path[si + 1] - path[si])


def _require_path_inside(grid: Grid, mask, path):
    samples = [path[0]]
    for a, b in zip(path[:-1], path[1:]):
        steps = max(2, int(np.ceil(np.linalg.norm(b - a) / (grid.h / 4.0))))
        for s in np.linspace(0.0, 1.0, steps + 1):
            samples.append(a + s * (b - a))
    for p in samples:
        idx = np.floor((p - grid.origin) / grid.h).astype(int)
        if np.any(idx < 0) or np.any(idx >= grid.n) or not mask[tuple(idx)]:
            raise GeometryError(f"path point {p} leaves the host eroded by r3")


class CubeCover:
    """Tessellation cubes meeting a region: integer lattice corners and side."""

    def __init__(self, lattice, side):
        self.lattice = np.asarray(lattice, dtype=np.int64)
        self.side = float(side)

    def __len__(self):
        return len(self.lattice)

    def corner(self, i):
        return self.lattice[i].astype(float) * self.side

    def corners(self):
        return self.lattice.astype(float) * self.side

    def diagonal(self):
        return self.side * np.sqrt(3.0)


def cube_cover(region: Region, r1) -> CubeCover:
    """Axis-aligned tessellation cubes of side 2*r1/sqrt(3) meeting the region.

    The cube diagonal is exactly 2*r1, so each cube fits inside the ball of
    radius r1 around its own center.  Overlap is tested with open interiors,
    so cubes merely touching a region face are not counted.
    """
    if not (r1 > 0):
        raise ConfigurationError("r1 must be positive")
    grid = region.grid
    side = 2.0 * r1 / np.sqrt(3.0)
    idx = np.argwhere(region.mask)
    los = idx * grid.h + grid.origin
    his = los + grid.h
    jmin_all = np.floor(los.min(axis=0) / side).astype(np.int64) - 1
    jmax_all = np.ceil(his.max(axis=0) / side).astype(np.int64) + 1
    shape = tuple(int(b - a + 1) for a, b in zip(jmin_all, jmax_all))
    hit = np.zeros(shape, dtype=bool)
    # mark, per voxel, the lattice cubes whose open interior meets its box:
    # largest range of j with j*side < hi and (j+1)*side > lo
    for lo, hi in zip(los, his):
        sl = []
        ok = True
        for d in range(3):
            j0 = int(np.floor(lo[d] / side))
            while (j0 + 1) * side <= lo[d]:
                j0 += 1
            j1 = int(np.ceil(hi[d] / side)) - 1
            while j1 * side >= hi[d]:
                j1 -= 1
            if j1 < j0:
                ok = False
                break
            sl.append(slice(int(j0 - jmin_all[d]), int(j1 + 1 - jmin_all[d])))
        if ok:
            hit[tuple(sl)] = True
    lattice = np.argwhere(hit) + jmin_all
    return CubeCover(lattice, side)
