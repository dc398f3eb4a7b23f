"""
Random Laplacian, Dirichlet solves, harmonic coordinate and effective conductance.

Boundary unknowns are never solved for: the interior system
    A f_int = rhs - B f_bd
is assembled from the conductances (A symmetric positive definite) and
solved by Jacobi-preconditioned conjugate gradient.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .environment import Environment, shift as shift_env
from .exceptions import DomainError, SolverError
from .lattice import BoxDomain, EdgeKey, box as make_box

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
_MAX_RESTARTS = 3


@dataclass(frozen=True, eq=False)
class LatticeField:
    """Scalar or vector-valued function on the box and its boundary"""
    box: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape[:1] != (self.box.n_vertices,) or values.ndim > 2:
            raise DomainError(
                f"field on {self.box} needs {self.box.n_vertices} rows, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_parts(cls, box: BoxDomain, interior: np.ndarray, boundary: np.ndarray) -> "LatticeField":
        return cls(box, np.concatenate([np.asarray(interior, float), np.asarray(boundary, float)]))

    @classmethod
    def constant(cls, box: BoxDomain, c: float = 0.0) -> "LatticeField":
        return cls(box, np.full(box.n_vertices, float(c)))

    @classmethod
    def coordinates(cls, box: BoxDomain) -> "LatticeField":
        """The vector field x -> x"""
        return cls(box, box.vertices.astype(np.float64))

    @classmethod
    def linear(cls, box: BoxDomain, t: Sequence[float]) -> "LatticeField":
        """The scalar field x -> t.x"""
        return cls(box, box.vertices @ _as_direction(t, box.d))

    @classmethod
    def from_function(cls, box: BoxDomain, fn: Callable[[np.ndarray], np.ndarray]) -> "LatticeField":
        return cls(box, fn(box.vertices))

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2

    @property
    def interior(self) -> np.ndarray:
        return self.values[: self.box.n_interior]

    @property
    def boundary(self) -> np.ndarray:
        return self.values[self.box.n_interior:]

    def at(self, x: Sequence[int]) -> Union[float, np.ndarray]:
        v = self.values[self.box.vertex_index(x)]
        return float(v) if not self.is_vector else v.copy()

    def component(self, j: int) -> "LatticeField":
        return LatticeField(self.box, self.values[:, j])

    def dot(self, t: Sequence[float]) -> "LatticeField":
        return LatticeField(self.box, self.values @ _as_direction(t, self.box.d))

    def gradient(self) -> np.ndarray:
        """f(x + e_i) - f(x) on every edge, in edge order"""
        return self.values[self.box.edge_head] - self.values[self.box.edge_tail]

    def __sub__(self, other: "LatticeField") -> "LatticeField":
        return LatticeField(self.box, self.values - other.values)

    def to_frame(self) -> pd.DataFrame:
        coords = {f"x{k + 1}": self.box.vertices[:, k] for k in range(self.box.d)}
        if self.is_vector:
            vals = {f"value{j + 1}": self.values[:, j] for j in range(self.values.shape[1])}
        else:
            vals = {"value": self.values}
        return pd.DataFrame({**coords, **vals})

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    tol: float
    converged: bool = True

    def merge(self, other: "SolveReport") -> "SolveReport":
        return SolveReport(
            max(self.iterations, other.iterations),
            max(self.residual, other.residual),
            max(self.tol, other.tol),
            self.converged and other.converged,
        )


@dataclass(frozen=True, eq=False)
class HarmonicCoordinate:
    psi: LatticeField
    report: SolveReport

    @property
    def corrector(self) -> LatticeField:
        return self.psi - LatticeField.coordinates(self.psi.box)


def _as_direction(t: Union[float, Sequence[float]], d: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t.shape == (1,) and d > 1:
        t = np.concatenate([t, np.zeros(d - 1)])
    if t.shape != (d,) or not np.all(np.isfinite(t)):
        raise DomainError(f"direction must be a finite {d}-vector, got {t}")
    return t


def iteration_cap(n: int, d: int) -> int:
    return int(math.ceil(50.0 * math.sqrt(max(n, 1)) * d))


class LaplacianSystem:
    """
    Interior system of mass - L_omega with the boundary eliminated.

    mass = 0 gives the random Laplacian itself.
    """

    def __init__(self, env: Environment, mass: float = 0.0):
        if mass < 0:
            raise DomainError(f"mass must be non-negative, got {mass}")
        self.env = env
        self.box = env.box
        self.mass = float(mass)
        self._assemble()

    def _assemble(self):
        box = self.box
        n, nb = box.n_interior, box.n_boundary
        a = self.env.conductances
        tail, head = box.edge_tail, box.edge_head
        t_in, h_in = tail < n, head < n

        rows = np.concatenate([tail[t_in], head[h_in]])
        diag = np.bincount(rows, weights=np.concatenate([a[t_in], a[h_in]]), minlength=n)
        both = t_in & h_in
        off_r = np.concatenate([tail[both], head[both]])
        off_c = np.concatenate([head[both], tail[both]])
        off_v = -np.concatenate([a[both], a[both]])
        self.stiffness = sparse.coo_matrix(
            (np.concatenate([diag, off_v]), (np.concatenate([np.arange(n), off_r]),
                                             np.concatenate([np.arange(n), off_c]))),
            shape=(n, n),
        ).tocsr()
        self.matrix = (self.stiffness + self.mass * sparse.identity(n, format="csr")).tocsr()
        self.diagonal = diag + self.mass

        # coupling of interior rows to boundary columns
        tb = t_in & ~h_in
        hb = h_in & ~t_in
        self.coupling = sparse.coo_matrix(
            (-np.concatenate([a[tb], a[hb]]),
             (np.concatenate([tail[tb], head[hb]]), np.concatenate([head[tb], tail[hb]]) - n)),
            shape=(n, nb),
        ).tocsr()

    @property
    def n(self) -> int:
        return self.box.n_interior

    @cached_property
    def factor(self):
        return splinalg.splu(self.matrix.tocsc())

    def reduced_rhs(self, rhs: Optional[np.ndarray], boundary: Optional[np.ndarray]) -> np.ndarray:
        b = np.zeros(self.n) if rhs is None else np.array(rhs, dtype=np.float64)
        if boundary is not None:
            b = b - self.coupling @ np.asarray(boundary, dtype=np.float64)
        return b

    def solve(
        self,
        rhs: Optional[np.ndarray] = None,
        boundary: Optional[np.ndarray] = None,
        tol: float = DEFAULT_TOL,
    ) -> Tuple[np.ndarray, SolveReport]:
        """Interior values of the solution; CG with Jacobi preconditioner"""
        if not tol > 0:
            raise DomainError(f"tolerance must be positive, got {tol}")
        b = self.reduced_rhs(rhs, boundary)
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros(self.n), SolveReport(0, 0.0, tol)

        cap = iteration_cap(self.n, self.box.d)
        precond = sparse.diags(1.0 / self.diagonal)
        count = [0]

        def _tick(_):
            count[0] += 1

        x = np.zeros(self.n)
        residual = 1.0
        for _ in range(_MAX_RESTARTS):
            remaining = cap - count[0]
            if remaining <= 0:
                break
            x, info = splinalg.cg(
                self.matrix, b, x0=x, rtol=tol, atol=0.0, maxiter=remaining, M=precond,
                callback=_tick,
            )
            residual = float(np.linalg.norm(b - self.matrix @ x)) / bnorm
            if residual <= tol:
                break
            if info > 0:
                break

        report = SolveReport(count[0], residual, tol, residual <= tol)
        if not report.converged:
            logger.warning(
                f"CG stopped at residual {residual:.3e} > {tol:.1e} after {count[0]} iterations"
            )
            raise SolverError(f"conjugate gradient did not converge on {self.box}", report)
        logger.debug(f"CG converged in {count[0]} iterations, residual {residual:.2e}")
        return x, report

    def solve_columns(self, rhs: np.ndarray) -> np.ndarray:
        """Direct solve for many right-hand sides with one sparse LU"""
        rhs = np.asarray(rhs, dtype=np.float64)
        return self.factor.solve(rhs if rhs.ndim == 2 else rhs[:, None]).reshape(rhs.shape)

    def residual(self, field: LatticeField, rhs: Optional[np.ndarray] = None) -> np.ndarray:
        """(mass - L) f - rhs on the interior"""
        res = self.matrix @ field.interior + self.coupling @ field.boundary
        return res if rhs is None else res - rhs


def laplacian(env: Environment, f: LatticeField) -> np.ndarray:
    """L_omega f on every interior vertex"""
    if f.box != env.box:
        raise DomainError(f"field on {f.box} does not live on {env.box}")
    a = env.conductances
    grad = f.gradient()
    flux = a[:, None] * grad if f.is_vector else a * grad
    n = env.box.n_interior
    out = np.zeros((n,) + f.values.shape[1:])
    tail, head = env.box.edge_tail, env.box.edge_head
    t_in, h_in = tail < n, head < n
    np.add.at(out, tail[t_in], flux[t_in])
    np.add.at(out, head[h_in], -flux[h_in])
    return out


def apply_operator(env: Environment, f: LatticeField, x: Sequence[int]) -> Union[float, np.ndarray]:
    """Sum over neighbours y of a_xy (f(y) - f(x)) at an interior vertex x"""
    if not env.box.contains(x):
        raise DomainError(f"vertex {tuple(x)} is not in {env.box}")
    value = laplacian(env, f)[env.box.vertex_index(x)]
    return float(value) if np.ndim(value) == 0 else value


def solve_dirichlet(
    env: Environment,
    boundary: LatticeField,
    rhs: Optional[LatticeField] = None,
    tol: float = DEFAULT_TOL,
    system: Optional[LaplacianSystem] = None,
) -> Tuple[LatticeField, SolveReport]:
    """
    f with f = boundary on the outer boundary and -L f = rhs inside.
    Vector data is solved component by component.
    """
    system = system or LaplacianSystem(env)
    bd = boundary.boundary
    src = None if rhs is None else rhs.interior
    if bd.ndim == 1:
        x, report = system.solve(src, bd, tol)
        return LatticeField.from_parts(env.box, x, bd), report

    columns, report = [], None
    for j in range(bd.shape[1]):
        x, rep = system.solve(None if src is None else src[:, j], bd[:, j], tol)
        columns.append(x)
        report = rep if report is None else report.merge(rep)
    return LatticeField.from_parts(env.box, np.column_stack(columns), bd), report


def harmonic_coordinate(env: Environment, tol: float = DEFAULT_TOL) -> HarmonicCoordinate:
    psi, report = solve_dirichlet(env, LatticeField.coordinates(env.box), tol=tol)
    return HarmonicCoordinate(psi, report)


def linear_response(env: Environment, t: Sequence[float], tol: float = DEFAULT_TOL,
                    system: Optional[LaplacianSystem] = None) -> Tuple[LatticeField, SolveReport]:
    """t . Psi, obtained from one scalar solve with boundary data t . x"""
    return solve_dirichlet(env, LatticeField.linear(env.box, t), tol=tol, system=system)


def dirichlet_energy(env: Environment, f: LatticeField) -> float:
    grad = f.gradient()
    sq = np.sum(grad ** 2, axis=1) if f.is_vector else grad ** 2
    return float(np.sum(env.conductances * sq))


def effective_conductance(env: Environment, t: Sequence[float], tol: float = DEFAULT_TOL) -> float:
    if not np.any(_as_direction(t, env.box.d)):
        return 0.0
    field, _ = linear_response(env, t, tol)
    return dirichlet_energy(env, field)


def energy_derivative(env: Environment, t: Sequence[float], e: EdgeKey,
                      tol: float = DEFAULT_TOL) -> float:
    """Derivative of the effective conductance in the conductance of e"""
    k = env.box.edge_index(e)
    field, _ = linear_response(env, t, tol)
    return float(field.gradient()[k] ** 2)


def series_conductance(env: Environment, t: float = 1.0) -> float:
    """Closed form on a path: t^2 (L+1)^2 / sum 1/a"""
    if env.box.d != 1:
        raise DomainError("series formula only applies in dimension 1")
    t = float(np.atleast_1d(t)[0])
    return t * t * (env.box.L + 1) ** 2 / float(np.sum(1.0 / env.conductances))


def gradient_norm(f: LatticeField, p: float) -> float:
    if p < 1:
        raise DomainError(f"exponent must be >= 1, got {p}")
    grad = f.gradient()
    mag = np.linalg.norm(grad, axis=1) if f.is_vector else np.abs(grad)
    return float((np.sum(mag ** p) / f.box.n_interior) ** (1.0 / p))


def interpolation_exponents(p: float, q: float) -> Tuple[float, float]:
    """Exponents (alpha, beta) with ||g||_p <= ||g||_2^alpha ||g||_q^beta for 2 < p < q"""
    if not 2 < p < q:
        raise DomainError(f"need 2 < p < q, got p={p}, q={q}")
    alpha = (2.0 / p) * (q - p) / (q - 2.0)
    beta = (q / p) * (p - 2.0) / (q - 2.0)
    return alpha, beta


# ---------------------------------------------------------------- proxy trends

def corrector_ratio(env: Environment, tol: float = DEFAULT_TOL) -> float:
    """
    |chi(x)|^2 / |x|^2 at x = (L/2) e_1 for the box of side 2L, with the
    origin at the box center and chi normalised to vanish there.
    """
    side = env.box.L
    if side % 4:
        raise DomainError(f"corrector ratio needs a side divisible by 4, got {side}")
    L = side // 2
    psi = harmonic_coordinate(env, tol).psi
    origin = (L,) * env.box.d
    target = tuple(L + (L // 2 if k == 0 else 0) for k in range(env.box.d))
    shift = np.zeros(env.box.d)
    shift[0] = L // 2
    chi = psi.at(target) - psi.at(origin) - shift
    return float(np.dot(chi, chi) / (L // 2) ** 2)


def gradient_gap(env: Environment, tol: float = DEFAULT_TOL) -> float:
    """
    Mean squared difference of harmonic-coordinate gradients between the box
    of side 2L (centered) and the full box of side 4L, over the edges of the
    central box of side L.
    """
    side = env.box.L
    if side % 4:
        raise DomainError(f"gradient gap needs a side divisible by 4, got {side}")
    L = side // 4
    d = env.box.d
    mid, core = make_box(d, 2 * L), make_box(d, L)
    inner_env = shift_env(env, (L,) * d, mid)

    grad_big = harmonic_coordinate(env, tol).psi.gradient()
    grad_mid = harmonic_coordinate(inner_env, tol).psi.gradient()

    idx_big = env.box.edge_indices(core.edge_base + L + L // 2, core.edge_axis)
    idx_mid = mid.edge_indices(core.edge_base + L // 2, core.edge_axis)
    diff = grad_big[idx_big] - grad_mid[idx_mid]
    return float(np.sum(diff ** 2) / core.n_interior)


def random_competitors(env: Environment, t: Sequence[float], count: int,
                       seed: int) -> List[LatticeField]:
    """Fields with the linear boundary data t.x and random interior values"""
    rng = np.random.default_rng(seed)
    base = LatticeField.linear(env.box, t)
    out = []
    for _ in range(count):
        values = base.values.copy()
        values[: env.box.n_interior] += rng.normal(scale=1.0, size=env.box.n_interior)
        out.append(LatticeField(env.box, values))
    return out
