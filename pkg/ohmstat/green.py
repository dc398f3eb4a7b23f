"""
Green functions.

- box Green function of -L_omega with zero boundary values, column by column
  or as a dense matrix for small boxes;
- the edge coefficient g = G(y,y) - 2 G(x,y) + G(x,x) for e = <x, y> and its
  variational dual (minimal energy of a unit jump across e);
- the full-lattice Green function of eps - Delta by Fourier quadrature and
  its reflected sum over mirror images of the box;
- triple-gradient decay fits and the harmonic-measure (Poisson kernel)
  energy identity.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse, stats
from scipy.sparse import linalg as splinalg

from .environment import Environment, homogeneous, shift as shift_env
from .exceptions import DomainError, PreconditionError
from .lattice import BoxDomain, EdgeKey, Point, box as make_box, centered_offset, shift_edge
from .solver import (
    DEFAULT_TOL,
    LaplacianSystem,
    LatticeField,
    SolveReport,
    dirichlet_energy,
)

logger = logging.getLogger(__name__)

NOISE_FLOOR = 1e-14
FOURIER_START_NODES = 64
FOURIER_TOL = 1e-10
REFLECTION_TOL = 1e-10
# node caps per dimension keep the tensor grid in memory
_FOURIER_MAX_NODES = {1: 8192, 2: 1024, 3: 192}


# ---------------------------------------------------------------- box Green

@dataclass(frozen=True, eq=False)
class GreenColumn:
    """G(., y) with zero values on the boundary"""
    source: Point
    field: LatticeField
    report: SolveReport

    def __call__(self, x: Sequence[int]) -> float:
        return float(self.field.at(x))


@dataclass(frozen=True)
class GreenEdgeCoefficient:
    edge: EdgeKey
    value: float


def _check_source(box: BoxDomain, y: Sequence[int]) -> Point:
    y = tuple(int(c) for c in y)
    if not box.contains(y):
        raise DomainError(f"source {y} is not in {box}")
    return y


def green_column(env: Environment, y: Sequence[int], tol: float = DEFAULT_TOL,
                 system: Optional[LaplacianSystem] = None) -> GreenColumn:
    y = _check_source(env.box, y)
    system = system or LaplacianSystem(env)
    rhs = np.zeros(env.box.n_interior)
    rhs[env.box.vertex_index(y)] = 1.0
    x, report = system.solve(rhs, None, tol)
    field_ = LatticeField.from_parts(env.box, x, np.zeros(env.box.n_boundary))
    return GreenColumn(y, field_, report)


def green_columns(env: Environment, sources: Sequence[Sequence[int]], tol: float = DEFAULT_TOL,
                  threads: int = 1) -> List[GreenColumn]:
    """Independent columns; solved concurrently when threads > 1"""
    system = LaplacianSystem(env)
    if threads <= 1:
        return [green_column(env, y, tol, system) for y in sources]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda y: green_column(env, y, tol, system), sources))


def green_matrix(env: Environment, mass: float = 0.0) -> np.ndarray:
    """Dense interior Green matrix from one sparse LU (small boxes)"""
    system = LaplacianSystem(env, mass)
    return system.solve_columns(np.eye(system.n))


def _edge_values_from_matrix(G: np.ndarray, box: BoxDomain) -> np.ndarray:
    n = box.n_interior
    tail, head = box.edge_tail, box.edge_head

    def entry(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.zeros(len(u))
        ok = (u < n) & (v < n)
        out[ok] = G[u[ok], v[ok]]
        return out

    return entry(head, head) - 2.0 * entry(tail, head) + entry(tail, tail)


def edge_coefficients(env: Environment) -> np.ndarray:
    """g on every edge, boundary-touching edges by zero extension"""
    return _edge_values_from_matrix(green_matrix(env), env.box)


def g_edge(env: Environment, e: EdgeKey, tol: float = DEFAULT_TOL,
           allow_boundary: bool = False) -> GreenEdgeCoefficient:
    """
    Double gradient of the Green function on the diagonal of edge e.
    Boundary-touching edges need allow_boundary (zero-extended stencil).
    """
    box = env.box
    env.box.edge_index(e)
    x, y = e.endpoints()
    inside = [p for p in (x, y) if box.contains(p)]
    if len(inside) < 2 and not allow_boundary:
        raise DomainError(f"edge {e} touches the boundary of {box}")
    system = LaplacianSystem(env)
    cols = {p: green_column(env, p, tol, system) for p in inside}

    def G(u: Point, v: Point) -> float:
        return cols[v](u) if v in cols and box.contains(u) else 0.0

    value = G(y, y) - 2.0 * G(x, y) + G(x, x)
    return GreenEdgeCoefficient(e, float(value))


def g_variational(env: Environment, e: EdgeKey) -> Tuple[float, LatticeField]:
    """
    inf Q(f) over f vanishing on the boundary with f(y) - f(x) = 1, from the
    Lagrange system [[2A, c], [c^T, 0]]. Returns (minimal energy, minimiser).
    """
    box = env.box
    box.edge_index(e)
    x, y = e.endpoints()
    n = box.n_interior
    c = np.zeros(n)
    if box.contains(y):
        c[box.vertex_index(y)] += 1.0
    if box.contains(x):
        c[box.vertex_index(x)] -= 1.0
    A = LaplacianSystem(env).matrix
    col = sparse.csr_matrix(c[:, None])
    kkt = sparse.bmat([[2.0 * A, col], [col.T, None]], format="csc")
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    sol = splinalg.spsolve(kkt, rhs)
    minimiser = LatticeField.from_parts(box, sol[:n], np.zeros(box.n_boundary))
    return dirichlet_energy(env, minimiser), minimiser


@dataclass
class GLimitReport:
    sides: List[int]
    values: List[float]
    gaps: List[float]
    monotone: bool
    last_gap: float
    stationarity_gap: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"L": self.sides, "g": self.values})

    @property
    def estimate(self) -> float:
        return self.values[-1]


def g_limit_estimate(env: Environment, sides: Sequence[int], i: int = 1,
                     tol: float = DEFAULT_TOL) -> GLimitReport:
    """
    g at the central edge of nested centered boxes cut out of env.box.
    Values are non-decreasing in the box; the last gap measures convergence.
    """
    sides = [int(s) for s in sides]
    if sides != sorted(set(sides)) or sides[-1] > env.box.L:
        raise DomainError(f"sides must be increasing and at most {env.box.L}, got {sides}")
    big = env.box
    center = EdgeKey(big.center(), i)
    values = []
    for L in sides:
        sub = make_box(big.d, L)
        z = centered_offset(sub, big)
        local = shift_edge(center, [-c for c in z])
        values.append(g_edge(shift_env(env, z, sub), local, tol).value)
        logger.debug(f"g at L={L}: {values[-1]:.12f}")

    gaps = list(np.diff(values))
    slack = 10.0 * tol * max(1.0, max(values))
    monotone = all(gap >= -slack for gap in gaps)

    # the same box reached by two successive shifts
    sub = make_box(big.d, sides[0])
    z = centered_offset(sub, big)
    z1 = tuple(c // 2 for c in z)
    z2 = tuple(a - b for a, b in zip(z, z1))
    mid = make_box(big.d, sides[0] + max(z2))
    twice = shift_env(shift_env(env, z1, mid), z2, sub)
    local = shift_edge(center, [-c for c in z])
    stationarity = abs(g_edge(twice, local, tol).value - values[0])

    return GLimitReport(sides, values, gaps, monotone, gaps[-1] if gaps else float("nan"),
                        stationarity)


# -------------------------------------------------------- full-lattice Green

def srw_green_closed_form(eps: float, x: int) -> float:
    """Green function of eps - Delta on Z"""
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    root = np.sqrt(eps * eps + 4.0 * eps)
    rho = (2.0 + eps - root) / 2.0
    return float(rho ** abs(int(x)) / root)


def _fourier_grid(eps: float, axes: Sequence[np.ndarray], nodes: int) -> np.ndarray:
    d = len(axes)
    k, w = np.polynomial.legendre.leggauss(nodes)
    k = (k + 1.0) * np.pi / 2.0
    w = w * np.pi / 2.0
    symbol = 2.0 * (1.0 - np.cos(k))
    denom = np.full((nodes,) * d, eps)
    for j in range(d):
        shape = [1] * d
        shape[j] = nodes
        denom = denom + symbol.reshape(shape)
    out = 1.0 / denom
    # integrand is even in every k_j: integrate over [0, pi]^d with cosines
    for coords in axes:
        weights = np.cos(np.outer(coords, k)) * w
        out = np.tensordot(out, weights, axes=([0], [1]))
    return out / np.pi ** d


def srw_green_grid(eps: float, axes: Sequence[Sequence[int]]) -> np.ndarray:
    """
    G^eps on the tensor grid axes[0] x ... x axes[d-1], by Gauss-Legendre
    quadrature of the Fourier integral, doubling the nodes until stable.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    axes = [np.abs(np.asarray(a, dtype=np.float64)) for a in axes]
    d = len(axes)
    nodes = FOURIER_START_NODES
    cap = _FOURIER_MAX_NODES.get(d, 128)
    current = _fourier_grid(eps, axes, nodes)
    while nodes < cap:
        nodes *= 2
        refined = _fourier_grid(eps, axes, nodes)
        change = float(np.max(np.abs(refined - current)))
        current = refined
        if change < FOURIER_TOL * max(1.0, float(np.max(np.abs(current)))):
            break
    else:
        logger.warning(f"Fourier quadrature hit the node cap {cap} in d={d}")
    return current


def srw_green(eps: float, x: Sequence[int], d: Optional[int] = None) -> float:
    x = tuple(int(c) for c in np.atleast_1d(x))
    if d is not None and d != len(x):
        raise DomainError(f"point {x} does not have dimension {d}")
    return float(srw_green_grid(eps, [[c] for c in x]).reshape(-1)[0])


def _images(L: int, y: int, R: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mirror images of coordinate y of the box [0, L) under the reflections
    in the faces at -1 and L (period 2(L+1)), for n = -R..R, with parity.
    """
    period = L + 1
    n = np.arange(-R, R + 1)
    m = np.floor_divide(n, 2)
    even = n % 2 == 0
    img = np.where(even, 2 * m * period + y, 2 * (m + 1) * period - y - 2)
    return img, n


def reflected_green(eps: float, domain: BoxDomain, x: Sequence[int], y: Sequence[int],
                    R: Optional[int] = None) -> float:
    """
    Alternating sum of G^eps(x - r_z(y)) over the mirror images r_z(y),
    |z|_inf <= R. R=None grows the radius until partial sums settle.
    x may also sit on the boundary, where the sum vanishes.
    """
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    y = _check_source(domain, y)
    x = tuple(int(c) for c in x)
    if not (domain.contains(x) or domain.is_boundary(x)):
        raise DomainError(f"evaluation point {x} is not in {domain} or on its boundary")
    if R is not None and R < 1:
        raise DomainError(f"truncation radius must be >= 1, got {R}")

    def partial_sums(radius: int) -> np.ndarray:
        axes, signs = [], []
        for j in range(domain.d):
            img, n = _images(domain.L, y[j], radius)
            axes.append(x[j] - img)
            signs.append(np.where(n % 2 == 0, 1.0, -1.0))
        terms = srw_green_grid(eps, axes)
        for j in range(domain.d):
            shape = [1] * domain.d
            shape[j] = -1
            terms = terms * signs[j].reshape(shape)
        sums = []
        for r in range(radius + 1):
            block = tuple(slice(radius - r, radius + r + 1) for _ in range(domain.d))
            sums.append(float(np.sum(terms[block])))
        return np.array(sums)

    if R is not None:
        return float(partial_sums(R)[-1])

    radius = 4
    while True:
        sums = partial_sums(radius)
        settled = np.flatnonzero(np.abs(np.diff(sums)) < REFLECTION_TOL)
        if settled.size and settled[0] + 1 < radius:
            return float(sums[settled[0] + 1])
        if radius >= 64:
            logger.warning("reflection sum did not settle by radius 64")
            return float(sums[-1])
        radius *= 2


def box_green_eps(eps: float, domain: BoxDomain, y: Sequence[int]) -> np.ndarray:
    """Column y of (eps - Delta)^{-1} on the box with zero boundary (interior values)"""
    y = _check_source(domain, y)
    system = LaplacianSystem(homogeneous(domain), mass=eps)
    rhs = np.zeros(domain.n_interior)
    rhs[domain.vertex_index(y)] = 1.0
    return system.solve_columns(rhs)


# ------------------------------------------------------- triple gradient decay

@dataclass
class DecayFit:
    directions: Tuple[int, int, int]
    eps: float
    L: int
    exponent: float
    prefactor: float
    stderr: float
    points: pd.DataFrame = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return self.points

    def summary(self) -> Dict[str, Any]:
        return {
            "directions": list(self.directions),
            "eps": self.eps,
            "L": self.L,
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "stderr": self.stderr,
            "n_points": int(self.points["used"].sum()),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def triple_gradient_values(domain: BoxDomain, eps: float, directions: Tuple[int, int, int],
                           rays: Sequence[Sequence[int]], radii: Sequence[int]) -> pd.DataFrame:
    """
    grad_i^(2) grad_j^(1) grad_k^(2) G(x, y) for y the center and
    x = y + r * ray, using exact Green columns of eps - Delta.

    `distance` runs between the midpoints of the two difference stencils,
    (x + e_j / 2) - (y + (e_i + e_k) / 2).
    """
    i, j, k = (int(c) - 1 for c in directions)
    d = domain.d
    unit = np.eye(d, dtype=np.int64)
    y = np.array(domain.center())
    stencil_offset = (unit[j] - unit[i] - unit[k]) / 2.0
    sources = [y, y + unit[i], y + unit[k], y + unit[i] + unit[k]]
    weights = [1.0, -1.0, -1.0, 1.0]

    system = LaplacianSystem(homogeneous(domain), mass=eps)
    rhs = np.zeros((domain.n_interior, 4))
    for col, s in enumerate(sources):
        rhs[domain.vertex_index(tuple(s)), col] = 1.0
    cols = system.solve_columns(rhs)
    H = np.concatenate([cols @ weights, np.zeros(domain.n_boundary)])

    rows = []
    for ray in rays:
        ray = np.asarray(ray, dtype=np.int64)
        for r in radii:
            x = y + r * ray
            lo, hi = domain.vertex_indices(np.stack([x, x + unit[j]]))
            distance = float(np.linalg.norm(r * ray + stencil_offset))
            if lo < 0 or hi < 0 or distance <= 0.0:
                continue
            rows.append({
                "ray": ",".join(str(c) for c in ray),
                "r": int(r),
                "distance": distance,
                "value": float(H[hi] - H[lo]),
            })
    return pd.DataFrame(rows)


def triple_gradient_decay(domain: BoxDomain, eps: float = 0.0,
                          directions: Tuple[int, int, int] = (1, 1, 1),
                          rays: Optional[Sequence[Sequence[int]]] = None,
                          r_min: Optional[int] = None, r_max: Optional[int] = None) -> DecayFit:
    """
    Fit log|value| against log distance; values under the noise floor are dropped.
    The window starts at max(4, L // 16) unless r_min is given.
    """
    if eps < 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    rays = rays or [tuple(1 if c == 0 else 0 for c in range(domain.d))]
    r_min = r_min or max(4, domain.L // 16)
    r_max = r_max or max(r_min + 1, domain.L // 4)
    points = triple_gradient_values(domain, eps, directions, rays, range(r_min, r_max + 1))
    points["used"] = points["value"].abs() >= NOISE_FLOOR
    used = points[points["used"]]
    if len(used) < 2:
        raise DomainError(f"not enough points above the noise floor on {domain}")
    fit = stats.linregress(np.log(used["distance"]), np.log(used["value"].abs()))
    return DecayFit(
        tuple(int(c) for c in directions), float(eps), domain.L,
        float(fit.slope), float(np.exp(fit.intercept)), float(fit.stderr), points,
    )


# ---------------------------------------------------------- Poisson kernel

@dataclass
class PoissonKernelReport:
    energy: float
    kernel_energy: float
    energy_residual: float
    row_sum_residual: float
    symmetry_residual: float
    kernel: np.ndarray = field(repr=False)

    def ok(self, tol: float) -> bool:
        return max(self.energy_residual, self.row_sum_residual, self.symmetry_residual) <= tol

    def summary(self) -> Dict[str, float]:
        out = asdict(self)
        out.pop("kernel")
        return out


def harmonic_measure(env: Environment) -> np.ndarray:
    """p(x, z): interior rows, one column per boundary vertex"""
    system = LaplacianSystem(env)
    return system.solve_columns(-system.coupling.toarray())


def poisson_kernel(env: Environment) -> np.ndarray:
    """K(y, z) = sum over x in the box adjacent to y of a_xy p(x, z)"""
    system = LaplacianSystem(env)
    adjacency = -system.coupling.toarray()
    return adjacency.T @ system.solve_columns(adjacency)


def poisson_kernel_energy_check(env: Environment, h: LatticeField,
                                tol: float = DEFAULT_TOL) -> PoissonKernelReport:
    """Energy of a harmonic h written through boundary values only"""
    system = LaplacianSystem(env)
    forcing = float(np.linalg.norm(system.coupling @ h.boundary))
    defect = float(np.linalg.norm(system.residual(h)))
    if defect > 10.0 * tol * max(forcing, 1.0):
        raise PreconditionError(f"field is not harmonic: residual {defect:.3e}")

    K = poisson_kernel(env)
    hb = h.boundary
    kernel_energy = 0.5 * float(np.sum(K * (hb[None, :] - hb[:, None]) ** 2))
    energy = dirichlet_energy(env, h)
    adjacent = (-system.coupling).sum(axis=0).A1
    scale = max(1.0, abs(energy))
    return PoissonKernelReport(
        energy=energy,
        kernel_energy=kernel_energy,
        energy_residual=abs(energy - kernel_energy) / scale,
        row_sum_residual=float(np.max(np.abs(K.sum(axis=1) - adjacent))),
        symmetry_residual=float(np.max(np.abs(K - K.T))),
        kernel=K,
    )
