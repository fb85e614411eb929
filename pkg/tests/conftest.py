import json
import os

import numpy as np
import pytest

import rungelab as rl
from rungelab.experiments import ExperimentConfig, build_scene
from rungelab import runge_op

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def load_config(name):
    with open(os.path.join(CONFIG_DIR, name), "r", encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@pytest.fixture(scope="session")
def grid8():
    return rl.build_grid((8, 8, 8), 0.125)


@pytest.fixture(scope="session")
def vacuum8(grid8):
    return rl.make_material(grid8, {"kind": "constant", "eps": 1.0, "mu": 1.0})


@pytest.fixture(scope="session")
def sys8(grid8, vacuum8):
    return rl.assemble(grid8, vacuum8, 2.0)


@pytest.fixture(scope="session")
def small_restriction(sys8, grid8):
    """8^3 single-face restriction operator with its SVD, shared across tests."""
    patch = rl.boundary_patch(grid8, "x-")
    region = rl.carve_region(grid8, {"kind": "ball", "center": [0.4, 0.5, 0.5], "r": 0.22},
                             role="subdomain_A")
    weights = rl.build_norm_weights(patch, region, collar="exclude_rim")
    op = rl.assemble_restriction(sys8, weights)
    svd = rl.weighted_svd(op)
    return sys8, weights, op, svd


@pytest.fixture(scope="session")
def reference_runge_scene():
    """12^3 reference scene shared by the heavy acceptance criteria.

    The last tuple entry is the wall-clock spent assembling the scene,
    operator and SVD, charged against the budget of the first criterion
    that consumes them.
    """
    import time

    t0 = time.time()
    cfg = load_config("runge_reference.json")
    scene = build_scene(cfg)
    region = rl.carve_region(scene.grid, cfg["regions"]["A"], role="subdomain_A")
    weights = rl.build_norm_weights(scene.patch, region, collar=cfg["patch"]["collar"])
    op = runge_op.assemble_restriction(scene.system, weights)
    svd = runge_op.weighted_svd(op)
    return cfg, scene, weights, op, svd, time.time() - t0


def rng_complex(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)
