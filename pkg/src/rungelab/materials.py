"""Cellwise symmetric permittivity/permeability tensor fields.

Tensors are stored per cell as (nx, ny, nz, 3, 3) arrays of relative values.
Construction validates symmetry, the two-sided eigenvalue bound (eigenvalues
of every cell tensor inside [c, 1/c]) and computes the discrete W^{1,inf}
bound M from entries and one-sided difference quotients.
"""

from __future__ import annotations

import numpy as np

from .errors import MaterialError, ConfigurationError
from .geometry import Grid


class MaterialField:
    """Per-cell (eps, mu) tensors plus the ellipticity constant and Lipschitz bound."""

    def __init__(self, grid: Grid, eps, mu, spec=None):
        self.grid = grid
        self.eps = np.ascontiguousarray(eps, dtype=float)
        self.mu = np.ascontiguousarray(mu, dtype=float)
        expected = grid.n + (3, 3)
        for name, t in (("eps", self.eps), ("mu", self.mu)):
            if t.shape != expected:
                raise MaterialError(f"{name} shape {t.shape} != {expected}")
            if not np.allclose(t, np.swapaxes(t, -1, -2), rtol=0, atol=1e-13):
                raise MaterialError(f"{name} tensors are not symmetric")
        self.spec = dict(spec) if spec else {}
        ev = np.concatenate([_cell_eigenvalues(self.eps), _cell_eigenvalues(self.mu)])
        lo, hi = float(ev.min()), float(ev.max())
        if lo <= 0:
            raise MaterialError(f"nonpositive tensor eigenvalue {lo:g}")
        self.c = min(lo, 1.0 / hi)
        self.M = lipschitz_bound(self)
        self.eps.flags.writeable = False
        self.mu.flags.writeable = False

    def eps_inv(self):
        return np.linalg.inv(self.eps)

    def mu_inv(self):
        return np.linalg.inv(self.mu)

    def is_vacuum(self):
        eye = np.eye(3)
        return np.array_equal(self.eps, np.broadcast_to(eye, self.eps.shape)) and \
            np.array_equal(self.mu, np.broadcast_to(eye, self.mu.shape))

    def is_diagonal(self):
        off = ~np.eye(3, dtype=bool)
        return not (self.eps[..., off].any() or self.mu[..., off].any())

    def key(self):
        return ("material", self.spec.get("kind", "custom"),
                float(self.eps.sum()), float(self.mu.sum()),
                float(np.abs(self.eps).max()), float(np.abs(self.mu).max()))

    def __repr__(self):
        return f"MaterialField(kind={self.spec.get('kind', 'custom')!r}, c={self.c:g}, M={self.M:g})"


def _cell_eigenvalues(tensors):
    return np.linalg.eigvalsh(tensors).reshape(-1)


def _as_tensor(value):
    t = np.asarray(value, dtype=float)
    if t.ndim == 0:
        return float(t) * np.eye(3)
    if t.shape == (3,):
        return np.diag(t)
    if t.shape == (3, 3):
        return t
    raise MaterialError(f"cannot interpret {t.shape} as a 3x3 tensor")


def make_material(grid: Grid, spec) -> MaterialField:
    """Build a material field from a spec dict.

    Kinds:
      constant: {"eps": t, "mu": t} with scalars, diagonals or 3x3 tensors.
      layered:  piecewise tensors along an axis with a linear transition of
                width >= one cell (a sharp jump violates the Lipschitz rule).
      smooth:   seeded random Fourier superposition with a budgeted amplitude,
                guaranteeing the eigenvalue window for every seed.
    """
    kind = spec.get("kind")
    if kind == "constant":
        eps = np.broadcast_to(_as_tensor(spec.get("eps", 1.0)), grid.n + (3, 3)).copy()
        mu = np.broadcast_to(_as_tensor(spec.get("mu", 1.0)), grid.n + (3, 3)).copy()
        return MaterialField(grid, eps, mu, spec)
    if kind == "layered":
        return _layered(grid, spec)
    if kind == "smooth":
        return _smooth(grid, spec)
    raise ConfigurationError(f"unknown material kind {kind!r}")


def _layered(grid: Grid, spec):
    axis = int(spec.get("axis", 0))
    breaks = [float(b) for b in spec["breakpoints"]]
    tensors = [_as_tensor(t) for t in spec["tensors"]]
    if len(tensors) != len(breaks) + 1:
        raise ConfigurationError("layered needs len(tensors) == len(breakpoints) + 1")
    width = float(spec.get("smoothing", 0.0))
    if width < grid.h:
        raise MaterialError(
            f"layered transition width {width:g} below one cell ({grid.h:g}); "
            "a sharp jump has no W^{1,inf} bound")
    coords = grid.cell_centers()[:, axis].reshape(grid.n)[
        tuple(slice(None) if d == axis else slice(0, 1) for d in range(3))].reshape(-1)
    coord_full = grid.cell_centers()[:, axis].reshape(grid.n)
    field = np.empty(grid.n + (3, 3))
    field[:] = tensors[0]
    for b, t_prev, t_next in zip(breaks, tensors[:-1], tensors[1:]):
        # linear ramp of the given width centered on the breakpoint
        s = np.clip((coord_full - (b - width / 2)) / width, 0.0, 1.0)
        field = field * (1 - s[..., None, None]) + t_next * s[..., None, None]
    del coords
    eps = field
    mu_spec = spec.get("mu", 1.0)
    mu = np.broadcast_to(_as_tensor(mu_spec), grid.n + (3, 3)).copy()
    return MaterialField(grid, eps, mu, spec)


def _smooth(grid: Grid, spec):
    seed = int(spec.get("seed", 0))
    amplitude = float(spec.get("amplitude", 0.3))
    n_modes = int(spec.get("modes", 3))
    max_wavenumber = int(spec.get("max_wavenumber", 2))
    if not (0 < amplitude < 1):
        raise ConfigurationError("smooth amplitude must sit in (0, 1)")
    rng = np.random.default_rng(seed)
    centers = grid.cell_centers()

    def scalar_field():
        vals = np.ones(len(centers))
        weights = rng.uniform(0.5, 1.0, size=n_modes)
        weights *= amplitude / weights.sum()
        for w in weights:
            k = rng.integers(-max_wavenumber, max_wavenumber + 1, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            vals += w * np.cos(2 * np.pi * centers @ k + phase)
        return vals

    basis = _random_rotation(rng)
    lams = np.stack([scalar_field() for _ in range(3)], axis=-1)
    field = np.einsum("ia,na,ja->nij", basis, lams, basis).reshape(grid.n + (3, 3))
    field = 0.5 * (field + np.swapaxes(field, -1, -2))
    eps = field
    lams_mu = np.stack([scalar_field() for _ in range(3)], axis=-1)
    mu = np.einsum("ia,na,ja->nij", basis, lams_mu, basis).reshape(grid.n + (3, 3))
    mu = 0.5 * (mu + np.swapaxes(mu, -1, -2))
    return MaterialField(grid, eps, mu, spec)


def _random_rotation(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def ellipticity_check(mat: MaterialField, c):
    """Check eigenvalues of every cell tensor against [c, 1/c].

    Returns (ok, worst) where worst identifies the offending cell and value.
    """
    if not (c > 0):
        raise ConfigurationError("ellipticity constant must be positive")
    worst = None
    ok = True
    for name, t in (("eps", mat.eps), ("mu", mat.mu)):
        ev = np.linalg.eigvalsh(t)
        lo_idx = np.unravel_index(np.argmin(ev[..., 0]), t.shape[:3])
        hi_idx = np.unravel_index(np.argmax(ev[..., -1]), t.shape[:3])
        lo = float(ev[..., 0][lo_idx])
        hi = float(ev[..., -1][hi_idx])
        if lo < c:
            ok = False
            if worst is None or lo < worst[2]:
                worst = (name, lo_idx, lo, "min eigenvalue below c")
        if hi > 1.0 / c:
            ok = False
            if worst is None or hi > 1.0 / c:
                worst = (name, hi_idx, hi, "max eigenvalue above 1/c")
    return ok, worst


def lipschitz_bound(mat: MaterialField):
    """Discrete W^{1,inf} bound: max of entries and one-sided difference quotients."""
    h = mat.grid.h
    m = 0.0
    for t in (mat.eps, mat.mu):
        m = max(m, float(np.abs(t).max()))
        for axis in range(3):
            d = np.abs(np.diff(t, axis=axis)) / h
            if d.size:
                m = max(m, float(d.max()))
    return m
