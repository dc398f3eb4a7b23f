"""
Identity checks and the self-test catalogue.

Every check returns a result dict with a status and details, and the runner
aggregates them into a pass count.
"""

import logging
import sys
import time
from datetime import datetime
from typing import Any, Callable, Dict, Sequence

import numpy as np

from .environment import ConductanceLaw, derive_seed, homogeneous, sample
from .green import (
    box_green_eps,
    g_edge,
    g_limit_estimate,
    g_variational,
    poisson_kernel,
    poisson_kernel_energy_check,
    reflected_green,
    srw_green,
    srw_green_closed_form,
)
from .lattice import EdgeKey, box as make_box
from .martingale import (
    h_edge,
    increment_representation_check,
    increments_exact,
    rank_one_check,
)
from .meyers import VectorField, singular_operator
from .solver import (
    LatticeField,
    effective_conductance,
    series_conductance,
    solve_dirichlet,
)

logger = logging.getLogger(__name__)


def green_checks(d: int = 2, L: int = 8, lam: float = 0.5, seed: int = 0,
                 tol: float = 1e-8) -> Dict[str, Any]:
    """Residuals of the Green-function identities on a sampled environment"""
    law = ConductanceLaw.uniform(lam)
    domain = make_box(d, L)
    env = sample(law, domain, seed)
    rng = np.random.default_rng(seed)
    out: Dict[str, Any] = {"d": d, "L": L, "lam": lam, "seed": seed}

    # 1/g = minimal energy of a unit jump
    e = EdgeKey(domain.center(), 1)
    g = g_edge(env, e).value
    energy, _ = g_variational(env, e)
    out["variational_residual"] = abs(1.0 / g - energy) * g

    # reflected full-lattice sum against the massive box solve
    eps = 0.1
    y = domain.center()
    column = box_green_eps(eps, domain, y)
    picks = rng.choice(domain.n_interior, size=min(5, domain.n_interior), replace=False)
    out["reflection_residual"] = max(
        abs(reflected_green(eps, domain, domain.vertex(int(k)), y) - column[int(k)])
        for k in picks
    )

    out["fourier_residual"] = max(
        abs(srw_green(0.5, [x]) - srw_green_closed_form(0.5, x)) for x in range(4)
    )

    boundary = LatticeField(domain, rng.normal(size=domain.n_vertices))
    h, _ = solve_dirichlet(env, boundary, tol=1e-12)
    out["poisson"] = poisson_kernel_energy_check(env, h, tol=1e-10).summary()

    big = sample(law, make_box(d, 4 * L), derive_seed(seed, 1))
    limit = g_limit_estimate(big, [L, 2 * L, 4 * L])
    out["g_limit"] = {
        "values": limit.values,
        "monotone": limit.monotone,
        "stationarity_gap": limit.stationarity_gap,
    }
    out["ok"] = bool(
        out["variational_residual"] <= tol
        and out["reflection_residual"] <= tol
        and out["fourier_residual"] <= tol
        and out["poisson"]["energy_residual"] <= tol
        and limit.monotone
        and limit.stationarity_gap == 0.0
    )
    return out


def martingale_checks(d: int = 1, L: int = 2, lam: float = 0.5, p: float = 0.5,
                      t: Sequence[float] = (1.0,), tol: float = 1e-9) -> Dict[str, Any]:
    """Exhaustive telescoping, martingale and representation residuals"""
    law = ConductanceLaw.two_point(lam, p)
    domain = make_box(d, L)
    table = increments_exact(domain, law, t, tol)
    rep = increment_representation_check(domain, law, t, tol, table=table,
                                         raise_on_failure=False)
    out = table.summary()
    out["representation_residuals"] = rep.residuals
    out["representation_ok"] = rep.ok
    out["brown"] = table.brown_diagnostics()
    out["ok"] = bool(rep.ok and max(table.telescoping_residual, table.martingale_residual) <= tol)
    return out


class SelfTester:
    """Runs the catalogue of small exact cases"""

    def __init__(self):
        self.results: Dict[str, Dict[str, Any]] = {}
        self.start_time = datetime.now()

    def _run(self, name: str, fn: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        started = time.perf_counter()
        try:
            details = fn()
            passed = bool(details.pop("passed"))
            result = {"status": "success" if passed else "failed", "details": details}
        except Exception as exc:  # a crashing case counts as a failure
            logger.error(f"❌ {name}: {exc}")
            result = {"status": "error", "details": {"error": str(exc)}}
        result["seconds"] = round(time.perf_counter() - started, 3)
        self.results[name] = result
        return result

    def check_edge_enumeration(self) -> Dict[str, Any]:
        big, small = make_box(2, 7), make_box(2, 2)
        e61 = big.edge(60)
        first = small.edges()[0]
        return {
            "passed": e61 == EdgeKey((3, 3), 2) and small.n_edges == 12
            and first == EdgeKey((-1, 0), 1),
            "edge_61": str(e61),
            "first_edge": str(first),
        }

    def check_homogeneous_ceff(self) -> Dict[str, Any]:
        worst = 0.0
        for d in (1, 2, 3):
            for L in (2, 4):
                exact = (L + 1) * L ** (d - 1)
                value = effective_conductance(homogeneous(make_box(d, L)), [1.0])
                worst = max(worst, abs(value - exact) / exact)
        return {"passed": worst <= 1e-10, "max_relative_error": worst}

    def check_series_resistors(self) -> Dict[str, Any]:
        law = ConductanceLaw.uniform(0.2)
        worst = 0.0
        for k, L in enumerate((3, 8, 17)):
            env = sample(law, make_box(1, L), derive_seed(7, k))
            exact = series_conductance(env, 1.0)
            worst = max(worst, abs(effective_conductance(env, [1.0], 1e-12) - exact) / exact)
        return {"passed": worst <= 1e-9, "max_relative_error": worst}

    def check_rank_one_path(self) -> Dict[str, Any]:
        env = homogeneous(make_box(1, 2))
        report = rank_one_check(env, EdgeKey((0,), 1), 2.0, tol=1e-10)
        return {
            "passed": abs(report.g_old - 2.0 / 3.0) <= 1e-10
            and abs(report.factor - 0.6) <= 1e-10 and report.ok(1e-10),
            "g": report.g_old,
            "factor": report.factor,
            "max_residual": report.max_residual,
        }

    def check_poisson_kernel_path(self) -> Dict[str, Any]:
        K = poisson_kernel(homogeneous(make_box(1, 2)))
        return {"passed": abs(K[0, 1] - 1.0 / 3.0) <= 1e-12, "K": K.tolist()}

    def check_fourier_closed_form(self) -> Dict[str, Any]:
        worst = max(abs(srw_green(1.0, [x]) - srw_green_closed_form(1.0, x)) for x in range(5))
        return {"passed": worst <= 1e-10, "max_error": worst}

    def check_h_routes(self) -> Dict[str, Any]:
        law = ConductanceLaw.two_point(0.5, 0.5)
        env = sample(law, make_box(1, 2), 3)
        value = h_edge(env, EdgeKey((0,), 1), tol=1e-10)
        return {
            "passed": abs(value.quadrature - value.closed_form) <= 1e-10,
            "closed_form": value.closed_form,
            "quadrature": value.quadrature,
        }

    def check_exhaustive_martingale(self) -> Dict[str, Any]:
        report = martingale_checks(1, 2, 0.5, 0.5, (1.0,), 1e-10)
        return {
            "passed": report["ok"],
            "telescoping": report["telescoping_residual"],
            "martingale": report["martingale_residual"],
        }

    def check_singular_operator(self) -> Dict[str, Any]:
        domain = make_box(2, 4)
        op = singular_operator(2, 4)
        rng = np.random.default_rng(0)
        h = LatticeField.from_parts(domain, rng.normal(size=domain.n_interior),
                                    np.zeros(domain.n_boundary))
        grad = VectorField.gradient_of(h)
        residual = (op(grad) + grad).norm()
        return {"passed": residual <= 1e-8, "residual": residual}

    def run_full_check(self) -> Dict[str, Any]:
        logger.info("🧪 running self-test catalogue")
        checks = [name for name in dir(self) if name.startswith("check_")]
        for name in checks:
            self._run(name[len("check_"):], getattr(self, name))
        passed = sum(r["status"] == "success" for r in self.results.values())
        return {
            "passed": passed,
            "total": len(self.results),
            "results": self.results,
            "timestamp": self.start_time.isoformat(),
        }

    def print_report(self, stream=None) -> None:
        stream = stream or sys.stdout
        for name, result in self.results.items():
            mark = "PASS" if result["status"] == "success" else "FAIL"
            print(f"{mark}  {name} ({result['seconds']}s)", file=stream)
        passed = sum(r["status"] == "success" for r in self.results.values())
        print(f"{passed}/{len(self.results)} passed", file=stream)


def selftest(stream=None) -> Dict[str, Any]:
    tester = SelfTester()
    summary = tester.run_full_check()
    tester.print_report(stream)
    return summary
