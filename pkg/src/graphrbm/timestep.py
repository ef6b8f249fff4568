"""One-step integrators for M u' + S u = F(t) and the sparse direct solve.

Schemes
-------
theta family (implicit Euler theta=1, Crank-Nicolson theta=1/2):
    (M + dt*theta*S) u1 = (M - dt*(1-theta)*S) u0 + dt*(theta*F1 + (1-theta)*F0)
semi-implicit Euler (stiffness implicit, convection + reaction explicit):
    (M + dt*K) u1 = (M - dt*(C+P)) u0 + dt*F1

Within a window of constant system matrix the factorization is cached in
a StepWorkspace and reused across steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

RESIDUAL_RTOL = 1e-10


class SingularSystem(SolverError):
    pass


@dataclass(frozen=True)
class SchemeKind:
    """Time integration scheme tag; theta is set only for the theta method."""

    name: str
    theta: float | None = None

    def __post_init__(self):
        if self.name not in ("ie", "cn", "theta", "siem"):
            raise SolverError(f"unknown scheme {self.name!r}")
        if self.name == "theta":
            if self.theta is None or not 0.0 <= self.theta <= 1.0:
                raise SolverError("theta method needs theta in [0, 1]")
        elif self.theta is not None:
            raise SolverError(f"scheme {self.name!r} takes no theta parameter")

    @property
    def theta_value(self) -> float | None:
        """Implicitness weight; None for the semi-implicit splitting."""
        return {"ie": 1.0, "cn": 0.5, "theta": self.theta, "siem": None}[self.name]

    @property
    def is_semi_implicit(self) -> bool:
        return self.name == "siem"

    @property
    def label(self) -> str:
        if self.name == "theta":
            return f"theta:{self.theta:g}"
        return self.name

    @staticmethod
    def parse(text: str) -> "SchemeKind":
        text = text.strip().lower()
        if text.startswith("theta"):
            _, _, value = text.partition(":")
            return SchemeKind("theta", float(value) if value else 0.5)
        return SchemeKind(text)


IMPLICIT_EULER = SchemeKind("ie")
CRANK_NICOLSON = SchemeKind("cn")
SEMI_IMPLICIT = SchemeKind("siem")


def theta_method(theta: float) -> SchemeKind:
    return SchemeKind("theta", float(theta))


class StepWorkspace:
    """Factorization cache keyed by the identity of the active system."""

    def __init__(self):
        self._cache: dict = {}

    def factorization(self, key, build):
        """Return the cached factorization for ``key``, computing it via ``build()``."""
        lu = self._cache.get(key)
        if lu is None:
            lu = _factorize(build())
            self._cache[key] = lu
        return lu

    def clear(self) -> None:
        self._cache.clear()

    def __len__(self) -> int:
        return len(self._cache)


def _factorize(matrix: sp.spmatrix):
    try:
        lu = spla.splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    return lu


def factor_nnz(lu) -> int:
    """Nonzeros of the triangular factors (memory proxy for the solve)."""
    nnz = getattr(lu, "nnz", None)
    if nnz is not None:
        return int(nnz)
    return int(lu.L.nnz + lu.U.nnz)


def solve_linear(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve with a residual guard.

    Raises SingularSystem if factorization fails or the residual exceeds
    RESIDUAL_RTOL * (1 + ||b||_inf); this also catches near-singular
    systems that factor without an explicit error.
    """
    b = np.asarray(b, dtype=float)
    lu = _factorize(A)
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solution contains non-finite entries")
    residual = np.abs(A @ x - b).max() if b.size else 0.0
    if residual > RESIDUAL_RTOL * (1.0 + np.abs(b).max(initial=0.0)):
        raise SingularSystem(f"residual {residual:.3e} too large, system near singular")
    return x


def step(
    scheme: SchemeKind,
    mass: sp.spmatrix,
    spatial,
    f0: np.ndarray,
    f1: np.ndarray,
    u: np.ndarray,
    dt: float,
    workspace: StepWorkspace | None = None,
    key=None,
) -> np.ndarray:
    """Advance one step of M u' + S u = F.

    ``spatial`` is the matrix S for the theta family, or the pair
    (stiffness, convection + reaction) for the semi-implicit scheme.
    ``f0``/``f1`` are the loads at the step's start and end times.
    """
    if dt <= 0.0:
        raise SolverError("dt must be positive")
    ws = workspace if workspace is not None else StepWorkspace()
    cache_key = key if key is not None else ("step", scheme.label, dt)
    if scheme.is_semi_implicit:
        if not isinstance(spatial, tuple) or len(spatial) != 2:
            raise SolverError(
                "semi-implicit stepping needs spatial=(stiffness, convection+reaction)"
            )
        stiff, explicit = spatial
        lu = ws.factorization(cache_key, lambda: mass + dt * stiff)
        rhs = mass @ u - dt * (explicit @ u) + dt * f1
        return lu.solve(rhs)
    theta = scheme.theta_value
    lu = ws.factorization(cache_key, lambda: mass + (dt * theta) * spatial)
    rhs = mass @ u + dt * (theta * f1 + (1.0 - theta) * f0)
    if theta != 1.0:
        rhs -= (dt * (1.0 - theta)) * (spatial @ u)
    return lu.solve(rhs)
