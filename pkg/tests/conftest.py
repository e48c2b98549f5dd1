import functools

import numpy as np
import pytest

from helmfosls.assembly import assemble_system
from helmfosls.femspace import build_test_space, build_trial_space
from helmfosls.mesh import MeshHierarchy, build_initial_mesh
from helmfosls.problems import make_problem


@functools.lru_cache(maxsize=None)
def hierarchy(problem, levels):
    return MeshHierarchy.from_initial(build_initial_mesh(problem)).uniform(levels)


@functools.lru_cache(maxsize=None)
def system(problem, kappa, levels, p, p_tilde):
    m = hierarchy(problem, levels).finest
    return assemble_system(build_trial_space(m, p), build_test_space(m, p_tilde),
                           make_problem(problem, kappa))


def local_hierarchy(problem="unit_square", steps=3, corner=(0.0, 0.0)):
    """Hierarchy refined repeatedly around the triangles touching ``corner``."""
    h = MeshHierarchy.from_initial(build_initial_mesh(problem))
    c = np.asarray(corner)
    for _ in range(steps):
        m = h.finest
        d = np.linalg.norm(m.vertices[m.triangles] - c, axis=-1).min(axis=1)
        h = h.refined(set(np.flatnonzero(d < 1e-12).tolist()))
    return h


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_complex(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
