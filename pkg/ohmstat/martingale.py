"""
Martingale increments of the effective conductance, rank-one perturbation
identities, the h integrals and the limiting-variance estimator.

Edges are revealed in the stationary order b_1 < ... < b_N. For a
two-point law every conditional expectation is a finite weighted sum, so
increments are computed exactly by enumerating all 2^N configurations.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .environment import (
    ConductanceLaw,
    Environment,
    derive_seed,
    perturb,
    resample_tail,
    riemann_integral,
    sample,
)
from .exceptions import DomainError, IdentityError, PreconditionError, QuadratureError
from .green import edge_coefficients, g_edge, green_column
from .lattice import BoxDomain, EdgeKey, box as make_box
from .solver import (
    DEFAULT_TOL,
    LaplacianSystem,
    LatticeField,
    _as_direction,
    harmonic_coordinate,
    linear_response,
)

logger = logging.getLogger(__name__)

MAX_ENUMERATED_EDGES = 14
MIN_SIGMA_REPLICAS = 100


def _solver_tol(tol: float) -> float:
    return max(1e-13, min(DEFAULT_TOL, tol * 1e-4))


# ------------------------------------------------------------------ rank one

@dataclass
class RankOneReport:
    edge: EdgeKey
    old_value: float
    new_value: float
    g_old: float
    g_new: float
    factor: float
    field_residual: float
    multiplicative_residual: float
    prefactor_residual: float
    ratio_residual: float

    @property
    def max_residual(self) -> float:
        return max(self.field_residual, self.multiplicative_residual,
                   self.prefactor_residual, self.ratio_residual)

    def ok(self, tol: float) -> bool:
        return self.factor > 0 and self.max_residual <= tol


def rank_one_check(env: Environment, e: EdgeKey, new_value: float,
                   tol: float = 1e-8) -> RankOneReport:
    """
    Changing the conductance of e = <x, y> from w to w':
      Psi' - Psi = -(w' - w) [G'(., y) - G'(., x)] grad_e Psi        (every vertex)
      grad_e Psi' = grad_e Psi / (1 + (w' - w) g)                    (multiplicative)
      1 - (w' - w) g' = g' / g = 1 / (1 + (w' - w) g)                (prefactor)
    """
    box = env.box
    k = box.edge_index(e)
    old = float(env.conductances[k])
    new_env = perturb(env, e, new_value)
    stol = _solver_tol(tol)

    psi = harmonic_coordinate(env, stol).psi
    psi_new = harmonic_coordinate(new_env, stol).psi
    g_old = g_edge(env, e, stol, allow_boundary=True).value
    g_new = g_edge(new_env, e, stol, allow_boundary=True).value
    delta = new_value - old
    factor = 1.0 / (1.0 + delta * g_old)

    x, y = e.endpoints()
    grad = psi.gradient()[k]
    scale = max(1.0, float(np.max(np.abs(grad))))

    def column(p) -> np.ndarray:
        if not box.contains(p):
            return np.zeros(box.n_vertices)
        return green_column(new_env, p, stol).field.values

    kernel = column(y) - column(x)
    predicted = -delta * kernel[:, None] * grad[None, :]
    field_residual = float(np.max(np.abs((psi_new.values - psi.values) - predicted))) / scale

    grad_new = psi_new.gradient()[k]
    multiplicative = float(np.max(np.abs(grad_new - factor * grad))) / scale

    report = RankOneReport(
        edge=e,
        old_value=old,
        new_value=float(new_value),
        g_old=g_old,
        g_new=g_new,
        factor=factor,
        field_residual=field_residual,
        multiplicative_residual=multiplicative,
        prefactor_residual=abs((1.0 - delta * g_new) - factor),
        ratio_residual=abs(g_new / g_old - factor),
    )
    logger.debug(f"rank-one {e}: factor {factor:.6f}, max residual {report.max_residual:.2e}")
    return report


# ---------------------------------------------------------------------- h

@dataclass
class HValue:
    edge: EdgeKey
    value: float
    closed_form: float
    quadrature: Optional[float]
    g: float
    error_estimate: float


def _check_no_pole(law: ConductanceLaw, omega_b: float, g: float) -> None:
    # 1 + (w' - w) g must stay positive down to the bottom of the support
    lowest = law.a if law.kind == "constant" else law.support[0]
    if g < 0 or g * (omega_b - lowest) >= 1.0:
        raise PreconditionError(
            f"g={g!r} at w={omega_b!r} puts a pole inside the support (lowest value {lowest!r})"
        )


def h_closed_form(law: ConductanceLaw, omega_b: float, g: float,
                  nodes: Optional[int] = None) -> float:
    """Integral of (w - w') g(w') / g(w) against the law, with g(w') by rank-one update"""
    _check_no_pole(law, omega_b, g)
    return law.expect(lambda w: (omega_b - w) / (1.0 + (w - omega_b) * g), nodes)


def h_double_quadrature(law: ConductanceLaw, omega_b: float, g: float, rtol: float = 1e-10,
                        nodes: Optional[int] = None) -> Tuple[float, float]:
    """
    Outer law quadrature of the inner integral from w' to w of
    (1 - (s - w) g(s))^2 ds, with g(s) = g / (1 + (s - w) g).
    """
    _check_no_pole(law, omega_b, g)

    def integrand(s: float) -> float:
        g_s = g / (1.0 + (s - omega_b) * g)
        return (1.0 - (s - omega_b) * g_s) ** 2

    xs, ws = law.quadrature(nodes)
    total, err = 0.0, 0.0
    for w_prime, weight in zip(xs, ws):
        value, e = riemann_integral(integrand, float(w_prime), omega_b, rtol)
        total += weight * value
        err += weight * e
    return float(total), float(err)


def h_edge(env: Environment, e: EdgeKey, law: Optional[ConductanceLaw] = None,
           tol: float = 1e-10, verify: bool = True) -> HValue:
    law = law or env.law
    omega_b = env.conductance(e)
    g = g_edge(env, e, _solver_tol(tol), allow_boundary=True).value
    closed = h_closed_form(law, omega_b, g)
    if not verify:
        return HValue(e, closed, closed, None, g, 0.0)

    quad, err = h_double_quadrature(law, omega_b, g, rtol=1e-10)
    if abs(quad - closed) > tol * max(1.0, abs(closed)):
        logger.warning(f"h routes disagree on {e} ({abs(quad - closed):.2e}); refining")
        nodes = 2 * law.nodes
        closed = h_closed_form(law, omega_b, g, nodes)
        quad, err = h_double_quadrature(law, omega_b, g, rtol=1e-12, nodes=nodes)
        if abs(quad - closed) > tol * max(1.0, abs(closed)):
            raise QuadratureError(
                f"h on {e}: closed form {closed!r} and double quadrature {quad!r} disagree"
            )
    return HValue(e, closed, closed, quad, g, max(err, abs(quad - closed)))


def increment_mean_over_edge(env: Environment, e: EdgeKey, t: Sequence[float],
                             tol: float = 1e-10) -> float:
    """
    Law average over the value of e (other edges fixed) of
    h * |grad_e (t . Psi)|^2; vanishes identically.
    """
    xs, ws = env.law.quadrature()
    k = env.box.edge_index(e)
    total = 0.0
    for w_b, weight in zip(xs, ws):
        local = perturb(env, e, float(w_b))
        h = h_edge(local, e, tol=tol, verify=False).value
        grad = linear_response(local, t, _solver_tol(tol))[0].gradient()[k]
        total += weight * h * grad * grad
    return float(total)


# -------------------------------------------------------- exhaustive tables

def _direct_gradients(env: Environment, t: np.ndarray) -> np.ndarray:
    """grad (t . Psi) on every edge by a direct solve"""
    system = LaplacianSystem(env)
    boundary = LatticeField.linear(env.box, t).boundary
    interior = system.solve_columns(system.reduced_rhs(None, boundary))
    full = LatticeField.from_parts(env.box, interior, boundary)
    return full.gradient()


def _configurations(n_edges: int) -> np.ndarray:
    """All 0/1 assignments; edge 0 is the most significant bit"""
    codes = np.arange(2 ** n_edges)[:, None]
    return (codes >> np.arange(n_edges - 1, -1, -1)[None, :]) & 1


def _check_enumerable(domain: BoxDomain, law: ConductanceLaw):
    if domain.n_edges > MAX_ENUMERATED_EDGES:
        raise DomainError(
            f"{domain} has {domain.n_edges} edges; enumeration is limited to {MAX_ENUMERATED_EDGES}"
        )
    if law.kind != "two_point":
        raise DomainError(f"exhaustive enumeration needs a two-point law, got {law.kind}")


def _contract_last(values: np.ndarray, weights: np.ndarray, count: int) -> np.ndarray:
    for _ in range(count):
        values = np.tensordot(values, weights, axes=([values.ndim - 1], [0]))
    return values


def _expand(values: np.ndarray, ndim: int) -> np.ndarray:
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


@dataclass
class IncrementTable:
    box: BoxDomain
    edges: List[EdgeKey]
    law: ConductanceLaw
    t: np.ndarray
    weights: np.ndarray
    ceff: np.ndarray
    mean: float
    increments: List[np.ndarray] = field(repr=False)
    telescoping_residual: float = 0.0
    martingale_residual: float = 0.0
    integral_residual: float = float("nan")
    integral_checked: List[int] = field(default_factory=list)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def path(self, bits: Sequence[int]) -> np.ndarray:
        """Z_1 .. Z_N along one configuration (bit 1 = the upper atom)"""
        bits = tuple(int(b) for b in bits)
        return np.array([self.increments[k][bits[: k + 1]] for k in range(self.n_edges)])

    def second_moments(self) -> np.ndarray:
        out = []
        for k, z in enumerate(self.increments, start=1):
            out.append(float(_contract_last(z ** 2, self.weights, k)))
        return np.array(out)

    def variance(self) -> float:
        centred = (self.ceff - self.mean) ** 2
        return float(_contract_last(centred, self.weights, self.n_edges))

    def brown_diagnostics(self, eps: float = 0.1) -> Dict[str, float]:
        """
        Conditional variance sum V = |Box|^-1 sum_k E(Z_k^2 | F_{k-1}) and the
        matching Lindeberg tail mass, averaged over configurations.
        """
        N, volume = self.n_edges, self.box.n_interior
        cut = eps * np.sqrt(volume)
        V = np.zeros((2,) * N)
        tail = np.zeros((2,) * N)
        for k, z in enumerate(self.increments, start=1):
            cond = _contract_last(z ** 2, self.weights, 1)
            V = V + _expand(cond, N)
            big = _contract_last(np.where(np.abs(z) > cut, z ** 2, 0.0), self.weights, 1)
            tail = tail + _expand(big, N)
        V, tail = V / volume, tail / volume
        mean_V = float(_contract_last(V, self.weights, N))
        second = float(_contract_last(V ** 2, self.weights, N))
        target = self.variance() / volume
        return {
            "conditional_variance_mean": mean_V,
            "conditional_variance_sd": float(np.sqrt(max(second - mean_V ** 2, 0.0))),
            "variance_per_volume": target,
            "identity_residual": abs(mean_V - target),
            "lindeberg_tail_mean": float(_contract_last(tail, self.weights, N)),
        }

    def summary(self) -> Dict[str, Any]:
        return {
            "d": self.box.d,
            "L": self.box.L,
            "n_edges": self.n_edges,
            "law": self.law.to_dict(),
            "t": self.t.tolist(),
            "mean": self.mean,
            "variance": self.variance(),
            "telescoping_residual": self.telescoping_residual,
            "martingale_residual": self.martingale_residual,
            "integral_residual": self.integral_residual,
            "integral_checked": self.integral_checked,
        }


def _enumerate_ceff(domain: BoxDomain, law: ConductanceLaw, t: np.ndarray,
                    with_green: bool = False):
    lo, hi = law.support
    configs = _configurations(domain.n_edges)
    ceff = np.empty(len(configs))
    grads = np.empty(configs.shape)
    gs = np.empty(configs.shape) if with_green else None
    for c, bits in enumerate(configs):
        env = Environment(domain, np.where(bits == 1, hi, lo), law)
        grad = _direct_gradients(env, t)
        grads[c] = grad
        ceff[c] = float(np.sum(env.conductances * grad ** 2))
        if with_green:
            gs[c] = edge_coefficients(env)
    return configs, ceff, grads, gs


def _integral_route(domain: BoxDomain, law: ConductanceLaw, t: np.ndarray, k: int,
                    prefix: Tuple[int, ...]) -> float:
    """
    Z_k at a prefix from the law average of integrals of the energy
    derivative in the k-th revealed edge (1-based k).
    """
    lo, hi = law.support
    atoms = np.array([lo, hi])
    N = domain.n_edges
    w_k = atoms[prefix[k - 1]]
    head = atoms[list(prefix[: k - 1])]
    tails = _configurations(N - k)
    total = 0.0
    for start_bit, start_weight in enumerate((1.0 - law.p, law.p)):
        if start_weight == 0.0:
            continue
        for bits in tails:
            weight = start_weight * np.prod(np.where(bits == 1, law.p, 1.0 - law.p))
            if weight == 0.0:
                continue
            rest = atoms[bits]

            def derivative(s: float) -> float:
                values = np.concatenate([head, [s], rest])
                grad = _direct_gradients(Environment(domain, values, law), t)
                return float(grad[k - 1] ** 2)

            value, _ = riemann_integral(derivative, float(atoms[start_bit]), float(w_k))
            total += weight * value
    return total


def increments_exact(domain: BoxDomain, law: ConductanceLaw, t: Sequence[float],
                     tol: float = 1e-9, integral_ks: Optional[Sequence[int]] = None,
                     integral_samples: int = 2, seed: int = 0) -> IncrementTable:
    """
    Z_k = E(C | F_k) - E(C | F_{k-1}) for every k and configuration, by
    enumeration. Telescoping and zero conditional mean are verified, and the
    integral representation is checked at sampled (k, prefix) pairs.
    """
    _check_enumerable(domain, law)
    t = _as_direction(t, domain.d)
    N = domain.n_edges
    weights = np.array([1.0 - law.p, law.p])
    _, ceff_flat, _, _ = _enumerate_ceff(domain, law, t)
    ceff = ceff_flat.reshape((2,) * N)

    conditional = [ceff]
    for _ in range(N):
        conditional.append(_contract_last(conditional[-1], weights, 1))
    conditional = conditional[::-1]  # conditional[k] given the first k edges
    mean = float(conditional[0])
    increments = [conditional[k] - _expand(conditional[k - 1], k) for k in range(1, N + 1)]

    total = sum(_expand(z, N) for z in increments)
    telescoping = float(np.max(np.abs(total - (ceff - mean))))
    martingale = max(
        float(np.max(np.abs(_contract_last(z, weights, 1)))) for z in increments
    )

    table = IncrementTable(domain, domain.edges(), law, t, weights, ceff, mean, increments,
                           telescoping, martingale)

    ks = list(integral_ks) if integral_ks is not None else list(range(max(1, N - 2), N + 1))
    if ks:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for k in ks:
            for _ in range(integral_samples):
                prefix = tuple(int(b) for b in rng.integers(0, 2, size=k))
                via_integral = _integral_route(domain, law, t, k, prefix)
                worst = max(worst, abs(via_integral - float(increments[k - 1][prefix])))
        table.integral_residual = worst
        table.integral_checked = ks

    logger.info(
        f"exhaustive increments on {domain}: telescoping {telescoping:.2e}, "
        f"martingale {martingale:.2e}, integral {table.integral_residual:.2e}"
    )
    if max(telescoping, martingale) > tol:
        raise IdentityError(
            f"martingale identities fail on {domain}",
            {"telescoping": telescoping, "martingale": martingale},
        )
    return table


@dataclass
class RepresentationReport:
    residuals: List[float]
    max_residual: float
    ok: bool


def increment_representation_check(domain: BoxDomain, law: ConductanceLaw, t: Sequence[float],
                                   tol: float = 1e-9, table: Optional[IncrementTable] = None,
                                   raise_on_failure: bool = True) -> RepresentationReport:
    """Z_k = E(h_k |grad_{b_k}(t . Psi)|^2 | F_k), evaluated by enumeration"""
    _check_enumerable(domain, law)
    t = _as_direction(t, domain.d)
    table = table or increments_exact(domain, law, t, tol, integral_ks=[])
    N = domain.n_edges
    configs, _, grads, gs = _enumerate_ceff(domain, law, t, with_green=True)
    lo, hi = law.support
    omega = np.where(configs == 1, hi, lo)

    h = np.zeros(configs.shape)
    for atom, weight in zip((lo, hi), table.weights):
        if weight:
            h += weight * (omega - atom) / (1.0 + (atom - omega) * gs)

    residuals = []
    for k in range(1, N + 1):
        integrand = (h[:, k - 1] * grads[:, k - 1] ** 2).reshape((2,) * N)
        predicted = _contract_last(integrand, table.weights, N - k)
        residuals.append(float(np.max(np.abs(predicted - table.increments[k - 1]))))

    report = RepresentationReport(residuals, max(residuals), max(residuals) <= tol)
    if not report.ok and raise_on_failure:
        raise IdentityError(
            f"increment representation fails on {domain}",
            {f"k={k + 1}": r for k, r in enumerate(residuals)},
        )
    return report


# ------------------------------------------------------------------- sigma

@dataclass
class SigmaEstimate:
    t: np.ndarray
    d: int
    proxy_L: int
    M_outer: int
    M_inner: int
    law: ConductanceLaw
    contributions: np.ndarray
    standard_errors: np.ndarray
    sigma_sq: float
    sigma_sq_se: float
    samples_h: np.ndarray = field(repr=False)
    samples_grad: np.ndarray = field(repr=False)

    def evaluate(self, t: Sequence[float]) -> "SigmaEstimate":
        """Recompute from the recorded samples for another direction t"""
        return _sigma_from_samples(_as_direction(t, self.d), self.d, self.proxy_L, self.law,
                                   self.samples_h, self.samples_grad)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t.tolist(),
            "d": self.d,
            "proxy_L": self.proxy_L,
            "M_outer": self.M_outer,
            "M_inner": self.M_inner,
            "law": self.law.to_dict(),
            "contributions": self.contributions.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "sigma_sq": self.sigma_sq,
            "sigma_sq_se": self.sigma_sq_se,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _sigma_from_samples(t: np.ndarray, d: int, proxy_L: int, law: ConductanceLaw,
                        h: np.ndarray, grad: np.ndarray) -> SigmaEstimate:
    # h: (d, outer, inner); grad: (d, outer, inner, d)
    _, M_outer, M_inner = h.shape
    x = h * (grad @ t) ** 2
    inner_mean = x.mean(axis=2)
    inner_var = x.var(axis=2, ddof=1) if M_inner > 1 else np.zeros_like(inner_mean)
    squares = inner_mean ** 2 - inner_var / M_inner
    contributions = squares.mean(axis=1)
    if M_outer > 1:
        errors = squares.std(axis=1, ddof=1) / np.sqrt(M_outer)
    else:
        errors = np.zeros(d)
    return SigmaEstimate(
        t=t, d=d, proxy_L=proxy_L, M_outer=M_outer, M_inner=M_inner, law=law,
        contributions=contributions, standard_errors=errors,
        sigma_sq=float(contributions.sum()),
        sigma_sq_se=float(np.sqrt(np.sum(errors ** 2))),
        samples_h=h, samples_grad=grad,
    )


def _edge_sample(env: Environment, k0: int, e0: EdgeKey) -> Tuple[float, np.ndarray]:
    """h and grad Psi (d components) at edge e0, from one factorisation"""
    box, law = env.box, env.law
    system = LaplacianSystem(env)
    boundary = LatticeField.coordinates(box).boundary
    rhs = [system.reduced_rhs(None, boundary[:, j]) for j in range(box.d)]
    inside = [p for p in e0.endpoints() if box.contains(p)]
    for p in inside:
        unit = np.zeros(box.n_interior)
        unit[box.vertex_index(p)] = 1.0
        rhs.append(unit)
    sol = system.solve_columns(np.column_stack(rhs))
    psi = LatticeField.from_parts(box, sol[:, : box.d], boundary)
    column = {p: sol[:, box.d + j] for j, p in enumerate(inside)}

    def G(u, v) -> float:
        return float(column[v][box.vertex_index(u)]) if u in column and v in column else 0.0

    x, y = e0.endpoints()
    g = G(y, y) - 2.0 * G(x, y) + G(x, x)
    h = h_closed_form(law, float(env.conductances[k0]), g)
    return h, psi.gradient()[k0]


def estimate_sigma_sq(law: ConductanceLaw, d: int, t: Sequence[float], proxy_L: int,
                      M_outer: int, M_inner: int, seed: int = 0, tol: float = DEFAULT_TOL,
                      threads: int = 1, min_replicas: int = MIN_SIGMA_REPLICAS) -> SigmaEstimate:
    """
    sum_i E[(E(h |grad_i (t . psi)|^2 | edges <= (0, i)))^2] on a centered proxy
    box: outer samples fix the revealed edges, inner samples redraw the rest
    with seeds shared across outer samples.
    """
    if proxy_L % 2 or proxy_L < 2:
        raise DomainError(f"proxy side must be even and >= 2, got {proxy_L}")
    if min(M_outer, M_inner) < min_replicas:
        raise DomainError(f"replica counts must be >= {min_replicas}, got {M_outer}, {M_inner}")
    t = _as_direction(t, d)
    domain = make_box(d, proxy_L)
    origin = domain.center()

    h = np.zeros((d, M_outer, M_inner))
    grad = np.zeros((d, M_outer, M_inner, d))
    if law.is_degenerate:
        logger.info("degenerate law: h vanishes identically, sigma^2 = 0")
        return _sigma_from_samples(t, d, proxy_L, law, h, grad)

    for i in range(1, d + 1):
        e0 = EdgeKey(origin, i)
        k0 = domain.edge_index(e0)
        inner_seeds = [derive_seed(seed, 2 * i + 1, m) for m in range(M_inner)]

        def outer(o: int, i=i, e0=e0, k0=k0, inner_seeds=inner_seeds):
            env = sample(law, domain, derive_seed(seed, 2 * i, o))
            out_h, out_g = np.empty(M_inner), np.empty((M_inner, d))
            for m, s in enumerate(inner_seeds):
                out_h[m], out_g[m] = _edge_sample(resample_tail(env, k0, s), k0, e0)
            return out_h, out_g

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(outer, range(M_outer)))
        else:
            results = [outer(o) for o in range(M_outer)]
        for o, (oh, og) in enumerate(results):
            h[i - 1, o], grad[i - 1, o] = oh, og
        logger.info(f"sigma^2 direction {i}: {M_outer} x {M_inner} samples on {domain}")

    return _sigma_from_samples(t, d, proxy_L, law, h, grad)
