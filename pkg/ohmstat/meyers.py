"""
The singular operator K = grad (-Delta)^{-1} div* on edge fields of the box.

Fields carry one value per edge of the box (boundary-crossing edges
included). With div* g(x) = sum_i g(x, i) - g(x - e_i, i) and
Delta = div* grad, K is minus the orthogonal projection onto gradients of
zero-boundary scalars:
    K grad h = -grad h,   K g = 0 when div* g = 0,   ||K||_2 <= 1.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .environment import Environment, derive_seed, homogeneous
from .exceptions import ContractionError, DomainError
from .lattice import BoxDomain, EdgeKey, box as make_box
from .solver import DEFAULT_TOL, LaplacianSystem, LatticeField

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Values on the edges of the box, one column per component"""
    box: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape[:1] != (self.box.n_edges,) or values.ndim > 2:
            raise DomainError(
                f"edge field on {self.box} needs {self.box.n_edges} rows, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def gradient_of(cls, f: LatticeField) -> "VectorField":
        return cls(f.box, f.gradient())

    @classmethod
    def delta(cls, box: BoxDomain, e: EdgeKey) -> "VectorField":
        values = np.zeros(box.n_edges)
        values[box.edge_index(e)] = 1.0
        return cls(box, values)

    @classmethod
    def direction(cls, box: BoxDomain, t: Sequence[float]) -> "VectorField":
        """The gradient of x -> t.x: t_i on every edge of direction i"""
        return cls(box, np.asarray(t, dtype=np.float64)[box.edge_axis])

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1) if self.values.ndim == 2 else np.abs(self.values)

    def norm(self, p: float = 2.0) -> float:
        return float(np.sum(self.magnitude ** p) ** (1.0 / p))

    def divergence(self) -> np.ndarray:
        """div* g on the interior vertices"""
        return _divergence(self.box, self.values)

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.box, self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.box, self.values - other.values)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(self.box, self.values * c)

    __rmul__ = __mul__


def _divergence(box: BoxDomain, values: np.ndarray) -> np.ndarray:
    n = box.n_interior
    out = np.zeros((n,) + values.shape[1:])
    tail, head = box.edge_tail, box.edge_head
    t_in, h_in = tail < n, head < n
    np.add.at(out, tail[t_in], values[t_in])
    np.add.at(out, head[h_in], -values[h_in])
    return out


def _gradient(box: BoxDomain, interior: np.ndarray) -> np.ndarray:
    full = np.concatenate([interior, np.zeros((box.n_boundary,) + interior.shape[1:])])
    return full[box.edge_head] - full[box.edge_tail]


def apply_K(domain: BoxDomain, g: VectorField, tol: float = DEFAULT_TOL) -> VectorField:
    """K g through conjugate-gradient solves of -Delta u = div* g"""
    if g.box != domain:
        raise DomainError(f"field on {g.box} applied on {domain}")
    system = LaplacianSystem(homogeneous(domain))
    div = g.divergence()
    if div.ndim == 1:
        u, _ = system.solve(div, None, tol)
    else:
        u = np.column_stack([system.solve(div[:, j], None, tol)[0] for j in range(div.shape[1])])
    return VectorField(domain, _gradient(domain, u))


class SingularOperator:
    """K with the unit Laplacian factorised once; exact up to round-off"""

    def __init__(self, domain: BoxDomain):
        self.box = domain
        self._system = LaplacianSystem(homogeneous(domain))

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        div = _divergence(self.box, values)
        return _gradient(self.box, self._system.solve_columns(div))

    def __call__(self, g: VectorField) -> VectorField:
        return VectorField(self.box, self.apply_values(g.values))

    def project(self, values: np.ndarray) -> np.ndarray:
        """Orthogonal projection onto gradient fields"""
        return -self.apply_values(values)


@lru_cache(maxsize=16)
def singular_operator(d: int, L: int) -> SingularOperator:
    return SingularOperator(make_box(d, L))


# ------------------------------------------------------------- norm estimate

@dataclass
class NormEstimate:
    p: float
    L: int
    d: int
    estimate: float
    trials: List[float] = field(default_factory=list)


def _dual_map(v: np.ndarray, p: float) -> np.ndarray:
    return np.sign(v) * np.abs(v) ** (p - 1.0)


def _lp(v: np.ndarray, p: float) -> float:
    return float(np.sum(np.abs(v) ** p) ** (1.0 / p))


def _power_trial(op: SingularOperator, p: float, seed: int, iterations: int,
                 gradients_only: bool) -> float:
    q = p / (p - 1.0)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=op.box.n_edges)
    if gradients_only:
        x = op.project(x)
    x /= _lp(x, p)
    best, previous = 0.0, 0.0
    for _ in range(iterations):
        y = op.apply_values(x)
        ratio = _lp(y, p)
        best = max(best, ratio)
        if ratio == 0.0:
            break
        if abs(ratio - previous) <= 1e-13 * ratio:
            break
        previous = ratio
        x = _dual_map(op.apply_values(_dual_map(y, p)), q)
        if gradients_only:
            x = op.project(x)
        size = _lp(x, p)
        if size == 0.0:
            break
        x /= size
    return best


def estimate_norm(domain: BoxDomain, p: float, trials: int = 8, seed: int = 0,
                  iterations: int = 200, gradients_only: bool = False,
                  threads: int = 1) -> NormEstimate:
    """
    Lower bound for the l^p operator norm of K by nonlinear power iteration
    with the sign-power duality map, best over random starts.
    """
    if not p > 1:
        raise DomainError(f"p must exceed 1, got {p}")
    op = singular_operator(domain.d, domain.L)
    seeds = [derive_seed(seed, k) for k in range(trials)]

    def run(s: int) -> float:
        return _power_trial(op, p, s, iterations, gradients_only)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(run, seeds))
    else:
        values = [run(s) for s in seeds]
    logger.info(f"||K||_{p} on {domain}: best of {trials} trials {max(values):.6f}")
    return NormEstimate(p, domain.L, domain.d, max(values), values)


def norm_sweep(sides: Sequence[int], p: float, d: int = 2, trials: int = 8, seed: int = 0,
               threads: int = 1) -> pd.DataFrame:
    rows = []
    for L in sides:
        est = estimate_norm(make_box(d, L), p, trials, seed, threads=threads)
        rows.append({"L": L, "p": p, "estimate": est.estimate, "trials": trials})
    return pd.DataFrame(rows, columns=["L", "p", "estimate", "trials"])


# --------------------------------------------------------------- fixed point

@dataclass
class FixedPointReport:
    iterations: int
    changes: List[float]
    contraction_product: float
    k_norm: float
    contrast: float
    converged: bool

    @property
    def ratios(self) -> List[float]:
        c = self.changes
        return [c[k + 1] / c[k] for k in range(len(c) - 1) if c[k] > 0]


def meyers_fixed_point(env: Environment, p: float = 2.0, tol: float = 1e-12,
                       max_iter: int = 500,
                       k_norm: Optional[float] = None) -> Tuple[VectorField, FixedPointReport]:
    """
    Corrector gradients from grad f <- K[g + (A - id) grad f], grad f_0 = 0,
    where g carries a_e on the edges of direction i in component i.
    Column i of the result is grad chi_i.
    """
    domain = env.box
    if k_norm is None:
        k_norm = estimate_norm(domain, p, trials=4, iterations=100).estimate
    excess = env.conductances - 1.0
    contrast = float(np.max(np.abs(excess)))
    product = k_norm * contrast
    if product >= 1.0:
        logger.warning(f"fixed point refused: ||K||_{p} * max|a-1| = {product:.4f}")
        raise ContractionError(
            f"||K||_{p} * max|a - 1| = {product:.4f} >= 1, iteration is not a contraction",
            product,
        )

    op = singular_operator(domain.d, domain.L)
    onehot = np.eye(domain.d)[domain.edge_axis]
    source = env.conductances[:, None] * onehot
    current = np.zeros((domain.n_edges, domain.d))
    changes: List[float] = []
    converged = False
    for it in range(1, max_iter + 1):
        nxt = op.apply_values(source + excess[:, None] * current)
        changes.append(float(np.linalg.norm(nxt - current)))
        current = nxt
        if changes[-1] < tol:
            converged = True
            break
    report = FixedPointReport(len(changes), changes, product, k_norm, contrast, converged)
    if not converged:
        logger.warning(f"fixed point stopped after {max_iter} sweeps, change {changes[-1]:.3e}")
    return VectorField(domain, current), report


def corrector_gradient(psi: LatticeField) -> VectorField:
    """grad chi = grad Psi - identity, as an edge field with d components"""
    domain = psi.box
    return VectorField(domain, psi.gradient() - np.eye(domain.d)[domain.edge_axis])


# --------------------------------------------------------------- weak (1,1)

@dataclass
class WeakTypeReport:
    L: int
    alphas: np.ndarray
    counts: np.ndarray
    l1_norm: float

    @property
    def constant(self) -> float:
        return float(np.max(self.alphas * self.counts) / self.l1_norm)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"L": self.L, "alpha": self.alphas, "count": self.counts})


def weak_type_profile(domain: BoxDomain, edge: Optional[EdgeKey] = None,
                      alphas: Optional[Sequence[float]] = None) -> WeakTypeReport:
    """Level-set counts of K applied to a unit impulse on one edge"""
    edge = edge or EdgeKey(domain.center(), 1)
    alphas = np.asarray(alphas if alphas is not None else np.logspace(-3, 0, 13))
    f = VectorField.delta(domain, edge)
    image = singular_operator(domain.d, domain.L)(f).magnitude
    counts = np.array([int(np.count_nonzero(image > a)) for a in alphas])
    return WeakTypeReport(domain.L, alphas, counts, f.norm(1.0))
