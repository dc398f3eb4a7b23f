"""
Conductance environments.

A configuration assigns one conductance to every edge of the box, in edge
index order. Draws are keyed by (master seed, edge index) through a 64-bit
avalanche mix, so values never depend on sampling order or thread layout.
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from .exceptions import DomainError, RangeError
from .lattice import BoxDomain, EdgeKey, box as make_box

logger = logging.getLogger(__name__)

LAW_KINDS = ("constant", "uniform", "two_point")

# splitmix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# slack on the ellipticity window for values produced by arithmetic on lam
_SUPPORT_SLACK = 1e-12


def _avalanche(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def mix64(seed: int, index: Any) -> np.ndarray:
    """
    splitmix64 finaliser of (seed, index), vectorised over index.
    Unsigned arithmetic wraps modulo 2**64.
    """
    base = _avalanche(np.array([int(seed) & _MASK64], dtype=np.uint64))
    idx = np.atleast_1d(np.asarray(index, dtype=np.uint64))
    return _avalanche(base + (idx + np.uint64(1)) * _GOLDEN)


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for a replica, trial or direction; independent of scheduling"""
    seed = int(master) & _MASK64
    for key in keys:
        seed = int(mix64(seed, int(key) & _MASK64)[0])
    return seed


def uniforms(seed: int, index: Any) -> np.ndarray:
    """Uniform [0, 1) variates with 53-bit resolution"""
    return (mix64(seed, index) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


@dataclass(frozen=True)
class ConductanceLaw:
    """Single-edge law: constant(a), uniform on [lam, 1/lam], or two_point(lam, p)"""
    kind: str
    lam: float
    a: float = 1.0
    p: float = 0.5
    nodes: int = 16

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise DomainError(f"unknown law kind {self.kind!r}, expected one of {LAW_KINDS}")
        if not 0.0 < self.lam <= 1.0:
            raise DomainError(f"ellipticity must lie in (0, 1], got {self.lam}")
        if self.kind == "constant" and not self.contains(self.a):
            raise RangeError(f"constant value {self.a} outside [{self.lam}, {1 / self.lam}]")
        if self.kind == "two_point" and not 0.0 <= self.p <= 1.0:
            raise DomainError(f"two-point probability must lie in [0, 1], got {self.p}")
        if self.nodes < 1:
            raise DomainError(f"quadrature node count must be positive, got {self.nodes}")

    @classmethod
    def constant(cls, a: float = 1.0, lam: Optional[float] = None) -> "ConductanceLaw":
        # the window must leave room for single-edge perturbations of a
        if lam is None:
            lam = 0.5 * min(a, 1.0 / a)
        return cls("constant", lam, a=a)

    @classmethod
    def uniform(cls, lam: float, nodes: int = 16) -> "ConductanceLaw":
        return cls("uniform", lam, nodes=nodes)

    @classmethod
    def two_point(cls, lam: float, p: float = 0.5) -> "ConductanceLaw":
        return cls("two_point", lam, p=p)

    @property
    def support(self) -> Tuple[float, float]:
        return self.lam, 1.0 / self.lam

    def contains(self, value: float) -> bool:
        lo, hi = self.support
        return lo * (1 - _SUPPORT_SLACK) <= value <= hi * (1 + _SUPPORT_SLACK)

    @property
    def is_degenerate(self) -> bool:
        if self.kind == "constant" or self.lam == 1.0:
            return True
        return self.kind == "two_point" and self.p in (0.0, 1.0)

    def draw(self, u: np.ndarray) -> np.ndarray:
        """Map uniform variates to conductances"""
        lo, hi = self.support
        if self.kind == "constant":
            return np.full(np.shape(u), float(self.a))
        if self.kind == "uniform":
            return lo + u * (hi - lo)
        return np.where(u < self.p, hi, lo)

    def quadrature(self, nodes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes and probability weights for integrals against the law"""
        lo, hi = self.support
        if self.kind == "constant":
            return np.array([float(self.a)]), np.array([1.0])
        if self.kind == "two_point":
            return np.array([lo, hi]), np.array([1.0 - self.p, self.p])
        x, w = np.polynomial.legendre.leggauss(nodes or self.nodes)
        return lo + (x + 1.0) * (hi - lo) / 2.0, w / 2.0

    def expect(self, fn: Callable[[np.ndarray], np.ndarray], nodes: Optional[int] = None) -> float:
        x, w = self.quadrature(nodes)
        return float(np.dot(w, fn(x)))

    def mean(self) -> float:
        return self.expect(lambda x: x)

    def variance(self) -> float:
        m = self.mean()
        return self.expect(lambda x: (x - m) ** 2)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind, "lam": self.lam}
        if self.kind == "constant":
            out["a"] = self.a
        elif self.kind == "two_point":
            out["p"] = self.p
        else:
            out["nodes"] = self.nodes
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConductanceLaw":
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Environment:
    """One conductance configuration on the edges of a box"""
    box: BoxDomain
    conductances: np.ndarray
    law: ConductanceLaw
    seed: Optional[int] = None

    def __post_init__(self):
        values = np.array(self.conductances, dtype=np.float64)
        if values.shape != (self.box.n_edges,):
            raise DomainError(
                f"expected {self.box.n_edges} conductances for {self.box}, got shape {values.shape}"
            )
        lo, hi = self.law.support
        bad = np.flatnonzero((values < lo * (1 - _SUPPORT_SLACK)) | (values > hi * (1 + _SUPPORT_SLACK)))
        if bad.size:
            k = int(bad[0])
            raise RangeError(
                f"conductance {values[k]} on edge {self.box.edge(k)} outside [{lo}, {hi}]"
            )
        values.setflags(write=False)
        object.__setattr__(self, "conductances", values)

    @property
    def lam(self) -> float:
        return self.law.lam

    def conductance(self, e: EdgeKey) -> float:
        return float(self.conductances[self.box.edge_index(e)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.box == other.box
            and self.law == other.law
            and np.array_equal(self.conductances, other.conductances)
        )

    __hash__ = None  # type: ignore[assignment]

    # ------------------------------------------------------------- serialisation

    def header(self) -> Dict[str, Any]:
        return {
            "d": self.box.d,
            "L": self.box.L,
            "lam": self.lam,
            "law": self.law.to_dict(),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps({"header": self.header(), "conductances": self.conductances.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        data = json.loads(text)
        head = data["header"]
        return cls(
            make_box(head["d"], head["L"]),
            np.asarray(data["conductances"], dtype=np.float64),
            ConductanceLaw.from_dict(head["law"]),
            head.get("seed"),
        )

    def to_bytes(self) -> bytes:
        """JSON header line followed by little-endian float64 payload"""
        head = json.dumps(self.header()).encode("utf-8") + b"\n"
        return head + self.conductances.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Environment":
        head_raw, payload = blob.split(b"\n", 1)
        head = json.loads(head_raw.decode("utf-8"))
        return cls(
            make_box(head["d"], head["L"]),
            np.frombuffer(payload, dtype="<f8").astype(np.float64),
            ConductanceLaw.from_dict(head["law"]),
            head.get("seed"),
        )


def sample(law: ConductanceLaw, domain: BoxDomain, seed: int) -> Environment:
    """i.i.d. conductances keyed by (seed, edge index)"""
    u = uniforms(seed, np.arange(domain.n_edges))
    return Environment(domain, law.draw(u), law, int(seed))


def homogeneous(domain: BoxDomain, a: float = 1.0, lam: Optional[float] = None) -> Environment:
    return Environment(domain, np.full(domain.n_edges, float(a)), ConductanceLaw.constant(a, lam))


def from_values(
    domain: BoxDomain, values: Sequence[float], lam: Optional[float] = None
) -> Environment:
    """Environment with explicit values; the law is recorded as uniform on the window"""
    values = np.asarray(values, dtype=np.float64)
    if lam is None:
        lam = float(min(values.min(), 1.0 / values.max(), 0.5))
    return Environment(domain, values, ConductanceLaw.uniform(lam))


def perturb(env: Environment, e: EdgeKey, value: float) -> Environment:
    """Copy of env with conductance `value` on edge e"""
    if not env.law.contains(value):
        lo, hi = env.law.support
        raise RangeError(f"value {value} for edge {e} outside [{lo}, {hi}]")
    values = env.conductances.copy()
    values[env.box.edge_index(e)] = value
    law = env.law
    if law.kind == "constant" and value != law.a:
        law = ConductanceLaw.uniform(law.lam)
    return Environment(env.box, values, law, env.seed)


def perturb_index(env: Environment, index: int, value: float) -> Environment:
    return perturb(env, env.box.edge(index), value)


def shift(env: Environment, z: Sequence[int], sub_box: BoxDomain) -> Environment:
    """
    Shifted restriction: edge (x, i) of sub_box gets the conductance of (x + z, i).
    """
    if sub_box.d != env.box.d or len(z) != env.box.d:
        raise DomainError(f"shift {tuple(z)} of {env.box} onto {sub_box}: dimension mismatch")
    source = env.box.edge_indices(sub_box.edge_base + np.asarray(z, dtype=np.int64), sub_box.edge_axis)
    if np.any(source < 0):
        missing = sub_box.edge(int(np.flatnonzero(source < 0)[0]))
        raise DomainError(f"{sub_box} shifted by {tuple(z)} is not covered by {env.box}: {missing}")
    return Environment(sub_box, env.conductances[source], env.law, env.seed)


def resample_tail(env: Environment, last_fixed: int, seed: int) -> Environment:
    """Keep edges with index <= last_fixed, redraw the later ones from the law"""
    fresh = sample(env.law, env.box, seed).conductances
    keep = np.arange(env.box.n_edges) <= last_fixed
    return Environment(env.box, np.where(keep, env.conductances, fresh), env.law, env.seed)


def riemann_integral(
    fn: Callable[[float], float], lo: float, hi: float, rtol: float = 1e-10
) -> Tuple[float, float]:
    """
    Oriented integral of a smooth bounded function from lo to hi.
    Returns (value, absolute error estimate).
    """
    if lo == hi:
        return 0.0, 0.0
    value, err = integrate.quad(fn, lo, hi, epsabs=0.0, epsrel=rtol, limit=200)
    return float(value), float(err)
