"""Operator consistency for full (off-diagonal) tensor materials, checked
against a symbolically-derived manufactured field."""

import numpy as np
import pytest
import sympy as sp

import rungelab as rl
from rungelab.solver import edge_material_matrix, face_material_matrix, face_pointwise_operator

# constant symmetric tensors with all off-diagonal entries populated
EPS = np.array([[1.3, 0.2, 0.1],
                [0.2, 1.1, 0.15],
                [0.1, 0.15, 1.4]])
MU = np.array([[1.2, 0.1, 0.05],
               [0.1, 1.0, 0.1],
               [0.05, 0.1, 1.3]])
OMEGA = 2.0


def _manufactured():
    x, y, z = sp.symbols("x y z")
    E = sp.Matrix([sp.sin(2 * y) * sp.cos(z),
                   sp.cos(x) * sp.sin(z + y),
                   sp.sin(x + 2 * z)])

    def curl(v):
        return sp.Matrix([sp.diff(v[2], y) - sp.diff(v[1], z),
                          sp.diff(v[0], z) - sp.diff(v[2], x),
                          sp.diff(v[1], x) - sp.diff(v[0], y)])

    mu_inv = sp.Matrix(np.linalg.inv(MU))
    eps = sp.Matrix(EPS)
    target = curl(mu_inv * curl(E)) - OMEGA ** 2 * eps * E
    fE = sp.lambdify((x, y, z), E, "numpy")
    fT = sp.lambdify((x, y, z), target, "numpy")
    return fE, fT


def _tensor_field(grid, tensor):
    return np.broadcast_to(tensor, grid.n + (3, 3)).copy()


def _operator_defect(n, fE, fT):
    grid = rl.build_grid((n, n, n), 1.0 / n)
    mat = rl.MaterialField(grid, _tensor_field(grid, EPS), _tensor_field(grid, MU))
    C = rl.curl_matrix(grid)
    L = (C.T @ face_material_matrix(grid, mat.mu_inv()) @ C
         - OMEGA ** 2 * edge_material_matrix(grid, mat.eps)).tocsr()

    pts = grid.edge_midpoints()
    comp = grid.edge_components()
    evals = np.stack([np.asarray(fE(*p)).reshape(3) for p in pts])
    Eh = evals[np.arange(grid.n_edges), comp]

    interior = grid.interior_edge_indices()
    we = grid.edge_cell_adjacency_weights(np.ones(grid.n, dtype=bool)) * grid.h ** 3
    applied = (L @ Eh)[interior] / we[interior]
    exact = np.stack([np.asarray(fT(*p)).reshape(3) for p in pts[interior]])
    exact = exact[np.arange(len(interior)), comp[interior]]
    return float(np.max(np.abs(applied - exact)))


def test_anisotropic_operator_consistency():
    fE, fT = _manufactured()
    coarse = _operator_defect(6, fE, fT)
    fine = _operator_defect(12, fE, fT)
    assert fine < coarse
    assert coarse / fine > 3.0, (coarse, fine)  # second-order truncation


def test_anisotropic_matrices_symmetric():
    grid = rl.build_grid((6, 6, 6), 1.0 / 6)
    mat = rl.MaterialField(grid, _tensor_field(grid, EPS), _tensor_field(grid, MU))
    Me = edge_material_matrix(grid, mat.eps)
    Mf = face_material_matrix(grid, mat.mu_inv())
    for M in (Me, Mf):
        d = (M - M.T)
        d.eliminate_zeros()
        defect = np.abs(d.toarray()).max() if d.nnz else 0.0
        assert defect <= 1e-15


def test_anisotropic_pointwise_identity_for_vacuum():
    grid = rl.build_grid((6, 6, 6), 1.0 / 6)
    eye = _tensor_field(grid, np.eye(3))
    P = face_pointwise_operator(grid, eye)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(grid.n_faces)
    assert np.array_equal(P @ v, v)


def test_anisotropic_pointwise_constant_tensor():
    grid = rl.build_grid((6, 6, 6), 1.0 / 6)
    P = face_pointwise_operator(grid, _tensor_field(grid, MU))
    # a constant vector field maps to the constant tensor product, exactly,
    # away from the walls where transverse averaging is complete
    vec = np.array([0.7, -0.4, 1.1])
    comp = grid.face_components()
    v = vec[comp].astype(float)
    out = P @ v
    expect = (MU @ vec)[comp]
    centers = grid.face_centers()
    inner = np.all((centers > 2 * grid.h) & (centers < 1 - 2 * grid.h), axis=1)
    assert np.allclose(out[inner], expect[inner], atol=1e-13)


def test_anisotropic_solve_runs(grid8):
    mat = rl.MaterialField(grid8, _tensor_field(grid8, EPS), _tensor_field(grid8, MU))
    sys_ = rl.assemble(grid8, mat, OMEGA)
    patch = rl.boundary_patch(grid8, "x-")
    rng = np.random.default_rng(1)
    f = rng.standard_normal(patch.n_dofs) + 1j * rng.standard_normal(patch.n_dofs)
    fields = rl.solve_bvp(sys_, rl.TangentialTrace(patch, f))
    assert rl.residual(fields, sys_) <= 10 * sys_.solver_tol
