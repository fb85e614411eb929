"""Discrete norms and stability-constant fitting.

Volume norms collocate the staggered components at cell centers and apply
midpoint quadrature; they are exact for constant fields.  The boundary
trace norm is a declared surrogate for the H^{-1/2}-type spaces: with M the
diagonal area mass and S a unit-weight graph Laplacian on the patch dofs,
the Gram is

    G_V = M^{1/2} (I + M^{-1/2} S M^{-1/2})^{-1/2} M^{1/2},

computed by dense eigendecomposition.  The mass-normalized spectrum of the
smoothing operator is >= 1, so the surrogate norm never exceeds the plain
L2 norm of the trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, SizeError
from .geometry import Grid, Region, BoundaryPatch

DENSE_GRAM_LIMIT = 4000


# ---------------------------------------------------------------------------
# center collocation and volume norms
# ---------------------------------------------------------------------------

def _edge_values_at_centers(grid: Grid, values):
    """Average the 4 parallel edges of each cell per component: (ncells, 3)."""
    out = np.empty((grid.n_cells, 3), dtype=complex)
    for axis in range(3):
        lo = grid.edge_offsets[axis]
        block = values[lo:lo + grid.edge_counts[axis]].reshape(grid.edge_shapes[axis])
        t1, t2 = (axis + 1) % 3, (axis + 2) % 3
        sl = [slice(None)] * 3
        acc = None
        for d1 in (0, 1):
            for d2 in (0, 1):
                s = [slice(None)] * 3
                s[t1] = slice(d1, grid.n[t1] + d1)
                s[t2] = slice(d2, grid.n[t2] + d2)
                piece = block[tuple(s)]
                acc = piece if acc is None else acc + piece
        out[:, axis] = (acc / 4.0).reshape(-1)
    return out


def _face_values_at_centers(grid: Grid, values):
    """Average the 2 opposite faces of each cell per component: (ncells, 3)."""
    out = np.empty((grid.n_cells, 3), dtype=complex)
    for axis in range(3):
        lo = grid.face_offsets[axis]
        block = values[lo:lo + grid.face_counts[axis]].reshape(grid.face_shapes[axis])
        s0 = [slice(None)] * 3
        s0[axis] = slice(0, grid.n[axis])
        s1 = [slice(None)] * 3
        s1[axis] = slice(1, grid.n[axis] + 1)
        out[:, axis] = ((block[tuple(s0)] + block[tuple(s1)]) / 2.0).reshape(-1)
    return out


def _lp_of_magnitudes(mag, h, p):
    if p == np.inf:
        return float(mag.max(initial=0.0))
    return float((np.sum(mag ** p) * h ** 3) ** (1.0 / p))


def lp_norm(grid: Grid, region: Region, p, E=None, H=None):
    """Volume-weighted Lp norm of the pointwise Euclidean magnitude.

    With both E and H given the 6-vector magnitude is used.
    """
    if not (p >= 1):
        raise ConfigurationError("p must be >= 1 (np.inf allowed)")
    sel = region.mask.reshape(-1)
    mags2 = np.zeros(int(sel.sum()))
    if E is not None:
        v = _edge_values_at_centers(grid, np.asarray(E, dtype=complex))[sel]
        mags2 = mags2 + np.sum(np.abs(v) ** 2, axis=1)
    if H is not None:
        v = _face_values_at_centers(grid, np.asarray(H, dtype=complex))[sel]
        mags2 = mags2 + np.sum(np.abs(v) ** 2, axis=1)
    return _lp_of_magnitudes(np.sqrt(mags2), grid.h, p)


def hcurl_norm(grid: Grid, region: Region, E=None, H=None, curl=None):
    """sqrt(L2^2 + L2(curl)^2) on a region using the discrete curl.

    ``curl`` is the edge->face curl matrix; its transpose acts as the dual
    face->edge curl (zero-extended at the boundary).
    """
    from .solver import curl_matrix

    C = curl_matrix(grid) if curl is None else curl
    total = 0.0
    if E is not None:
        E = np.asarray(E, dtype=complex)
        total += lp_norm(grid, region, 2, E=E) ** 2
        total += lp_norm(grid, region, 2, H=C @ E) ** 2
    if H is not None:
        H = np.asarray(H, dtype=complex)
        total += lp_norm(grid, region, 2, H=H) ** 2
        total += lp_norm(grid, region, 2, E=C.T @ H) ** 2
    return float(np.sqrt(total))


def norm(field_or_trace, where, kind, p=None, weights=None):
    """Dispatching norm front-end.

    kind: "Lp" (requires p), "Hcurl", or "BoundaryHs" (requires weights).
    ``field_or_trace``: an (E, H) pair for volume kinds (either entry may be
    None), or a trace coefficient vector for the boundary kind.
    """
    if kind == "Lp":
        if p is None:
            raise ConfigurationError("Lp norm needs the exponent p")
        E, H = field_or_trace
        return lp_norm(where.grid, where, p, E=E, H=H)
    if kind == "Hcurl":
        E, H = field_or_trace
        return hcurl_norm(where.grid, where, E=E, H=H)
    if kind == "BoundaryHs":
        w = weights if weights is not None else where
        if not isinstance(w, NormWeights):
            raise ConfigurationError("BoundaryHs norm needs NormWeights")
        return w.v_norm(field_or_trace)
    raise ConfigurationError(f"unknown norm kind {kind!r}")


# ---------------------------------------------------------------------------
# weighted inner products
# ---------------------------------------------------------------------------

class NormWeights:
    """Grams for the boundary trace space V and the interior space X.

    gram_V: dense SPD matrix over the selected patch dofs with its Cholesky
    factor.  gram_X: diagonal volume weights over the region-restricted
    (E, H) dofs, stored as index lists plus weight vectors.
    """

    def __init__(self, patch: BoundaryPatch, region: Region, collar,
                 v_sel, gram_V, chol_V, x_edge_idx, x_edge_w, x_face_idx, x_face_w):
        self.patch = patch
        self.region = region
        self.collar = collar
        self.v_sel = v_sel                      # positions into patch.edge_dofs
        self.v_dofs = patch.edge_dofs[v_sel]    # global edge indices
        self.gram_V = gram_V
        self.chol_V = chol_V                    # lower triangular, G_V = L L^T
        self.x_edge_idx = x_edge_idx
        self.x_edge_w = x_edge_w
        self.x_face_idx = x_face_idx
        self.x_face_w = x_face_w

    @property
    def n_v(self):
        return len(self.v_dofs)

    @property
    def n_x(self):
        return len(self.x_edge_idx) + len(self.x_face_idx)

    def v_inner(self, f, g):
        """<f, g>_V, linear in f, conjugate-linear in g."""
        return complex(np.conj(g) @ (self.gram_V @ f))

    def v_norm(self, f):
        return float(np.sqrt(max(self.v_inner(f, f).real, 0.0)))

    def x_weights(self):
        return np.concatenate([self.x_edge_w, self.x_face_w])

    def x_inner(self, u, v):
        w = self.x_weights()
        return complex(np.sum(w * u * np.conj(v)))

    def x_norm(self, u):
        return float(np.sqrt(max(self.x_inner(u, u).real, 0.0)))

    def restrict(self, fields):
        """Stack the region-restricted (E, H) dofs of a FieldPair."""
        return np.concatenate([fields.E[self.x_edge_idx], fields.H[self.x_face_idx]])

    def v_solve(self, rhs):
        """Apply G_V^{-1} through the Cholesky factor."""
        y = sla.solve_triangular(self.chol_V, rhs, lower=True)
        return sla.solve_triangular(self.chol_V.T, y, lower=False)


def _patch_graph_laplacian(patch: BoundaryPatch, sel):
    """Unit-weight Laplacian connecting dofs that share a patch face."""
    from .geometry import _face_edges

    dof_pos = {int(d): i for i, d in enumerate(patch.edge_dofs[sel])}
    n = len(sel)
    S = np.zeros((n, n))
    for (side, a, b) in patch.face_slots:
        members = [dof_pos[d] for d in _face_edges(patch.grid, side, a, b) if d in dof_pos]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                u, v = members[i], members[j]
                S[u, u] += 1.0
                S[v, v] += 1.0
                S[u, v] -= 1.0
                S[v, u] -= 1.0
    return S


def build_norm_weights(patch: BoundaryPatch, region: Region,
                       collar="include_rim") -> NormWeights:
    """Assemble the V and X Grams for a patch / region pair.

    The V Gram applies the inverse square root of the mass-normalized
    (identity plus graph Laplacian) by dense eigendecomposition; patches
    beyond 4000 dofs are rejected.
    """
    sel = patch.select(collar)
    if len(sel) == 0:
        raise ConfigurationError("collar selection leaves no patch dofs")
    if len(sel) > DENSE_GRAM_LIMIT:
        raise SizeError(
            f"patch carries {len(sel)} dofs; dense eigendecomposition is capped at "
            f"{DENSE_GRAM_LIMIT}, coarsen the patch or the grid")
    mass = patch.edge_area[sel]
    S = _patch_graph_laplacian(patch, sel)
    rsqrt_mass = 1.0 / np.sqrt(mass)
    S_norm = rsqrt_mass[:, None] * S * rsqrt_mass[None, :]
    S_norm = 0.5 * (S_norm + S_norm.T)
    evals, evecs = np.linalg.eigh(np.eye(len(sel)) + S_norm)
    inv_sqrt = (evecs * (1.0 / np.sqrt(evals))) @ evecs.T
    sqrt_mass = np.sqrt(mass)
    gram = sqrt_mass[:, None] * inv_sqrt * sqrt_mass[None, :]
    gram = 0.5 * (gram + gram.T)
    chol = np.linalg.cholesky(gram)

    grid = patch.grid
    we = grid.edge_cell_adjacency_weights(region.mask) * grid.h ** 3
    wf = grid.face_cell_adjacency_weights(region.mask) * grid.h ** 3
    x_edge_idx = np.flatnonzero(we > 0)
    x_face_idx = np.flatnonzero(wf > 0)
    return NormWeights(patch, region, collar, sel, gram, chol,
                       x_edge_idx, we[x_edge_idx], x_face_idx, wf[x_face_idx])


# ---------------------------------------------------------------------------
# constant fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    model: str
    params: dict
    r2: float
    n: int
    flag: str | None = None

    EXPONENT_KEYS = {"holder": "tau", "log_modulus": "m", "power": "delta"}

    def exponent(self):
        return self.params[self.EXPONENT_KEYS[self.model]]

    def row(self):
        return {"model": self.model, "C": self.params["C"],
                "exponent": self.exponent(), "r2": self.r2, "n": self.n,
                "flag": self.flag or ""}


def r_squared(y, yhat):
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res < 1e-28 else 0.0
    return max(0.0, min(1.0, 1.0 - ss_res / ss_tot))


def fit_holder(triples, c_flag_threshold=1e6) -> FitResult:
    """Fit a2 <= C a1^tau a3^(1-tau) over positive triples.

    tau minimizes the spread of r_i(tau) = log a2 - tau log a1 - (1-tau) log a3
    (a one-dimensional convex search); log C is then set to the max residual so
    the bound holds with equality at the worst sample.  Data that admit no
    bound with C below ``c_flag_threshold`` are flagged.
    """
    triples = np.asarray(triples, dtype=float)
    if triples.ndim != 2 or triples.shape[1] != 3 or len(triples) < 3:
        raise ConfigurationError("fit_holder needs at least 3 (a1, a2, a3) triples")
    if np.any(triples <= 0):
        raise ConfigurationError("holder fit requires strictly positive values")
    la1, la2, la3 = np.log(triples).T

    def spread(tau):
        r = la2 - tau * la1 - (1 - tau) * la3
        return r.max() - r.min()

    lo, hi = 0.0, 1.0
    for _ in range(200):
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if spread(m1) <= spread(m2):
            hi = m2
        else:
            lo = m1
    tau = float(np.clip(0.5 * (lo + hi), 1e-9, 1 - 1e-9))
    resid = la2 - tau * la1 - (1 - tau) * la3
    logC = float(resid.max())
    # goodness of the centered log-linear model
    yhat = tau * la1 + (1 - tau) * la3 + np.median(resid)
    r2 = r_squared(la2, yhat)
    C = float(np.exp(logC))
    flag = "no_bound_below_threshold" if C > c_flag_threshold else None
    return FitResult("holder", {"C": C, "tau": tau}, r2, len(triples), flag)


def fit_log_modulus(pairs) -> FitResult:
    """Least squares of log e on log log(1/t): e(t) ~= C (log 1/t)^(-m)."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or len(pairs) < 4:
        raise ConfigurationError("fit_log_modulus needs at least 4 (t, e) pairs")
    t, e = pairs.T
    if np.any((t <= 0) | (t >= 1)):
        raise ConfigurationError("abscissae must lie strictly inside (0, 1)")
    if np.any(e <= 0):
        raise ConfigurationError("values must be positive")
    x = np.log(np.log(1.0 / t))
    y = np.log(e)
    slope, intercept = np.polyfit(x, y, 1)
    m = float(-slope)
    C = float(np.exp(intercept))
    r2 = r_squared(y, slope * x + intercept)
    flag = "non_decaying" if m <= 0 else None
    return FitResult("log_modulus", {"C": C, "m": m}, r2, len(pairs), flag)


def fit_power(pairs) -> FitResult:
    """Least squares of log e on log j: e(j) ~= C j^(-delta)."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or len(pairs) < 2:
        raise ConfigurationError("fit_power needs at least 2 (j, e) pairs")
    j, e = pairs.T
    if np.any(j <= 0) or np.any(e <= 0):
        raise ConfigurationError("power fit requires positive data")
    x = np.log(j)
    y = np.log(e)
    slope, intercept = np.polyfit(x, y, 1)
    r2 = r_squared(y, slope * x + intercept)
    flag = "non_decaying" if -slope <= 0 else None
    return FitResult("power", {"C": float(np.exp(intercept)), "delta": float(-slope)},
                     r2, len(pairs), flag)
