"""Plane-wave data and the three benchmark problems."""
from __future__ import annotations

import numpy as np

from .assembly import ProblemData
from .errors import UnknownProblem

DIRECTIONS = {
    "unit_square": np.pi / 3,
    "non_trapping": np.pi / 3,
    "trapping": 9 * np.pi / 10,
}


class PlaneWave:
    """phi(x) = exp(-i kappa r.x) with |r| = 1, and u = grad(phi) / kappa."""

    def __init__(self, kappa, angle):
        self.kappa = float(kappa)
        self.r = np.array([np.cos(angle), np.sin(angle)])
        assert abs(np.linalg.norm(self.r) - 1.0) <= 1e-14

    def phi(self, x):
        return np.exp(-1j * self.kappa * (x @ self.r))

    def u(self, x):
        return -1j * self.phi(x)[..., None] * self.r

    def exact(self, x):
        return self.phi(x), self.u(x)

    def robin(self, x, n):
        """(u.n - i phi) / kappa, the Robin datum in the scaled system."""
        return -1j * ((n @ self.r) + 1.0) * self.phi(x) / self.kappa

    def dirichlet(self, x, n):
        """phi / kappa, the Dirichlet datum in the scaled system."""
        return self.phi(x) / self.kappa


def make_problem(problem, kappa, angle=None, kind="plane_wave"):
    """ProblemData for ``unit_square``, ``non_trapping``, ``trapping`` or
    ``custom``.

    A ``custom`` problem lives on a user mesh with ``D`` and ``R`` edges:
    ``kind="plane_wave"`` prescribes the plane wave as exact solution,
    ``kind="scattering"`` sets f = 0 = g_D with the incoming-wave Robin datum.
    """
    if problem == "custom":
        wave = PlaneWave(kappa, np.pi / 3 if angle is None else angle)
        meta = {"direction": wave.r.tolist(), "kind": kind}
        if kind == "plane_wave":
            return ProblemData(kappa, g_D=wave.dirichlet, g=wave.robin, exact=wave.exact,
                               name=problem, meta=meta)
        if kind == "scattering":
            return ProblemData(kappa, g=wave.robin, name=problem, meta=meta)
        raise UnknownProblem(f"unknown custom problem kind {kind!r}")
    if problem not in DIRECTIONS:
        raise UnknownProblem(f"unknown problem {problem!r}")
    wave = PlaneWave(kappa, DIRECTIONS[problem] if angle is None else angle)
    meta = {"direction": wave.r.tolist()}
    if problem == "unit_square":
        return ProblemData(kappa, g=wave.robin, exact=wave.exact, name=problem, meta=meta)
    # sound-soft scattering of the incoming wave: f = 0 = g_D
    return ProblemData(kappa, g=wave.robin, name=problem, meta=meta)
