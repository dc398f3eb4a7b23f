"""
Monte Carlo driver for effective conductances and the statistics built on it.

Replica r always uses the seed derive_seed(master, r), so results do not
depend on the number of worker threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from .config import ExperimentConfig
from .environment import ConductanceLaw, derive_seed, sample, shift as shift_env
from .exceptions import NumericalError, PreconditionError
from .lattice import box as make_box
from .martingale import SigmaEstimate
from .solver import DEFAULT_TOL, corrector_ratio, effective_conductance, gradient_gap

logger = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.01
CLT_MIN_REPLICAS = 500
LINDEBERG_EPS = (1.0, 2.0, 4.0)
RECORD_COLUMNS = ["replica", "L", "seed", "ceff"]


@dataclass
class ReplicaRecord:
    replica: int
    L: int
    seed: int
    ceff: float
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SummaryStats:
    n: int
    mean: float
    variance: Optional[float]
    skewness: Optional[float]
    excess_kurtosis: Optional[float]
    ks_statistic: Optional[float]
    p_value: Optional[float]
    variance_per_volume: Optional[float]
    mean_per_volume: float
    mean_se: Optional[float] = None
    variance_se: Optional[float] = None
    skewness_se: Optional[float] = None
    kurtosis_se: Optional[float] = None
    L: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _finite_or_none(value: float) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


def _moments(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise mean, unbiased variance, skewness and excess kurtosis"""
    with np.errstate(divide="ignore", invalid="ignore"):
        mean = samples.mean(axis=-1)
        var = samples.var(axis=-1, ddof=1)
        skew = stats.skew(samples, axis=-1, bias=False)
        kurt = stats.kurtosis(samples, axis=-1, fisher=True, bias=False)
    return mean, var, skew, kurt


def _ks_normal(standardized: np.ndarray) -> np.ndarray:
    """KS distance to N(0, 1), row-wise"""
    x = np.sort(standardized, axis=-1)
    n = x.shape[-1]
    cdf = stats.norm.cdf(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return np.maximum(upper.max(axis=-1), lower.max(axis=-1))


def _standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, ddof=1, keepdims=True)
    return (x - mean) / sd


def skewness_standard_error(n: int) -> float:
    return float(np.sqrt(6.0 * n * (n - 1) / ((n - 2) * (n + 1) * (n + 3))))


def kurtosis_standard_error(n: int) -> float:
    return float(2.0 * skewness_standard_error(n) * np.sqrt((n * n - 1.0) / ((n - 3) * (n + 5))))


def summarize(values: Sequence[float], L: int, d: int, bootstrap: int = 200,
              seed: int = 0) -> SummaryStats:
    """Moments, KS distance to the fitted normal and bootstrap standard errors"""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    volume = float(L) ** d
    mean = float(x.mean())
    if n < 2:
        return SummaryStats(n, mean, None, None, None, None, None, None, mean / volume, L=L)

    _, var, skew, kurt = _moments(x)
    var = float(var)
    ks = float(_ks_normal(_standardize(x))) if var > 0 else None
    out = SummaryStats(
        n=n,
        mean=mean,
        variance=var,
        skewness=_finite_or_none(skew) if var > 0 else None,
        excess_kurtosis=_finite_or_none(kurt) if var > 0 else None,
        ks_statistic=ks,
        p_value=None,
        variance_per_volume=var / volume,
        mean_per_volume=mean / volume,
        L=L,
    )
    if bootstrap > 1:
        rng = np.random.default_rng(seed)
        resampled = x[rng.integers(0, n, size=(bootstrap, n))]
        b_mean, b_var, b_skew, b_kurt = _moments(resampled)
        out.mean_se = float(b_mean.std(ddof=1))
        out.variance_se = float(b_var.std(ddof=1))
        if var > 0:
            out.skewness_se = _finite_or_none(np.nanstd(b_skew, ddof=1))
            out.kurtosis_se = _finite_or_none(np.nanstd(b_kurt, ddof=1))
    return out


# ------------------------------------------------------------------- runs

def _replica(law: ConductanceLaw, L: int, d: int, t: Sequence[float], tol: float,
             master: int, r: int) -> ReplicaRecord:
    seed = derive_seed(master, r)
    try:
        env = sample(law, make_box(d, L), seed)
        return ReplicaRecord(r, L, seed, effective_conductance(env, t, tol))
    except NumericalError as exc:
        logger.warning(f"replica {r} at L={L} failed: {exc}")
        return ReplicaRecord(r, L, seed, float("nan"), str(exc))


def run_ceff(config: ExperimentConfig) -> Tuple[List[ReplicaRecord], Dict[int, SummaryStats]]:
    """Effective conductance of config.replicas environments for every side"""
    law = config.conductance_law()
    records: List[ReplicaRecord] = []
    summaries: Dict[int, SummaryStats] = {}
    logger.info(f"🚀 ceff run: d={config.d}, sides={config.sides}, law={law.to_dict()}, "
                f"M={config.replicas}, threads={config.threads}")

    for L in config.sides:
        def work(r: int, L=L) -> ReplicaRecord:
            return _replica(law, L, config.d, config.t, config.tol, config.seed, r)

        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                batch = list(pool.map(work, range(config.replicas)))
        else:
            batch = [work(r) for r in range(config.replicas)]

        failures = sum(rec.failed for rec in batch)
        if failures > MAX_FAILURE_FRACTION * config.replicas:
            raise NumericalError(
                f"{failures} of {config.replicas} replicas failed at L={L}; aborting"
            )
        records.extend(batch)
        good = [rec.ceff for rec in batch if not rec.failed]
        summaries[L] = summarize(good, L, config.d, seed=config.seed)
        logger.info(f"✅ L={L}: mean {summaries[L].mean:.6g}, failures {failures}")
    return records, summaries


def records_frame(records: Sequence[ReplicaRecord]) -> pd.DataFrame:
    rows = [(r.replica, r.L, r.seed, r.ceff) for r in records if not r.failed]
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


# --------------------------------------------------------------------- CLT

@dataclass
class CLTResult:
    summary: SummaryStats
    lindeberg: Dict[str, float]
    skewness_se: float
    kurtosis_se: float
    reject: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "summary": self.summary.to_dict(),
            "lindeberg": self.lindeberg,
            "skewness_se": self.skewness_se,
            "kurtosis_se": self.kurtosis_se,
            "reject": self.reject,
        }


def ks_bootstrap_pvalue(values: Sequence[float], resamples: int = 1000,
                        seed: int = 0) -> Tuple[float, float]:
    """
    KS statistic of the standardized sample and its p-value under a normal
    law with estimated mean and variance, by parametric bootstrap.
    """
    x = np.asarray(values, dtype=np.float64)
    observed = float(_ks_normal(_standardize(x)))
    rng = np.random.default_rng(seed)
    null = _ks_normal(_standardize(rng.normal(size=(resamples, len(x)))))
    return observed, float((1 + np.count_nonzero(null >= observed)) / (resamples + 1))


def clt_test(values: Sequence[float], L: int, d: int, resamples: int = 1000, seed: int = 0,
             alpha: float = 0.01, min_n: int = CLT_MIN_REPLICAS) -> CLTResult:
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n < min_n:
        raise PreconditionError(f"CLT test needs at least {min_n} replicas, got {n}")
    summary = summarize(x, L, d, seed=seed)
    if not summary.variance:
        raise PreconditionError("sample has zero variance; nothing to standardize")
    summary.ks_statistic, summary.p_value = ks_bootstrap_pvalue(x, resamples, seed)

    sd = np.sqrt(summary.variance)
    scale = float(L) ** (d / 2.0) * sd
    lindeberg = {
        f"eps={eps:g}": float(np.mean(np.abs(x - summary.mean) > eps * scale))
        for eps in LINDEBERG_EPS
    }
    result = CLTResult(
        summary=summary,
        lindeberg=lindeberg,
        skewness_se=skewness_standard_error(n),
        kurtosis_se=kurtosis_standard_error(n),
        reject=summary.p_value < alpha,
    )
    logger.info(f"CLT test L={L}: KS {summary.ks_statistic:.4f}, p {summary.p_value:.3f}")
    return result


# --------------------------------------------------------- variance scaling

@dataclass
class ScalingReport:
    sides: List[int]
    variances: List[float]
    slope: Optional[float]
    slope_ci: Optional[List[float]]
    intercept: Optional[float]
    variance_per_volume: Dict[int, float]
    variance_per_volume_ci: Dict[int, List[float]]
    refused: bool = False
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["variance_per_volume"] = {str(k): v for k, v in self.variance_per_volume.items()}
        out["variance_per_volume_ci"] = {str(k): v for k, v in self.variance_per_volume_ci.items()}
        return out


def variance_scaling(frame: pd.DataFrame, d: int, bootstrap: int = 1000,
                     seed: int = 0) -> ScalingReport:
    """Fit log Var(C) = slope * log L + intercept over the sides in frame"""
    groups = {int(L): g["ceff"].to_numpy() for L, g in frame.groupby("L")}
    sides = sorted(groups)
    if len(sides) < 3:
        raise PreconditionError(f"variance scaling needs at least 3 sides, got {sides}")
    variances = [float(np.var(groups[L], ddof=1)) for L in sides]
    per_volume = {L: v / float(L) ** d for L, v in zip(sides, variances)}

    if min(variances) <= 0.0:
        logger.warning("zero variance at some side; log-log fit refused")
        return ScalingReport(sides, variances, None, None, None, per_volume, {}, True,
                             "zero variance: the conductance law is degenerate")

    rng = np.random.default_rng(seed)
    boot = np.empty((bootstrap, len(sides)))
    for j, L in enumerate(sides):
        x = groups[L]
        boot[:, j] = x[rng.integers(0, len(x), size=(bootstrap, len(x)))].var(axis=1, ddof=1)
    logs = np.log(np.asarray(sides, dtype=np.float64))
    fit = stats.linregress(logs, np.log(variances))
    slopes = np.array([stats.linregress(logs, np.log(row)).slope for row in boot])
    ci = {
        L: [float(q) / float(L) ** d for q in np.percentile(boot[:, j], [2.5, 97.5])]
        for j, L in enumerate(sides)
    }
    report = ScalingReport(
        sides, variances, float(fit.slope),
        [float(q) for q in np.percentile(slopes, [2.5, 97.5])],
        float(fit.intercept), per_volume, ci,
    )
    logger.info(f"variance scaling: slope {report.slope:.3f} (target {d})")
    return report


# ------------------------------------------------------------- proxy trends

def run_proxy_trends(law: ConductanceLaw, d: int, sides: Sequence[int] = (8, 16, 32),
                     replicas: int = 20, seed: int = 0, tol: float = DEFAULT_TOL,
                     threads: int = 1) -> pd.DataFrame:
    """
    Replica means of the corrector ratio (box of side 2L) and the gradient
    gap between boxes of sides 2L and 4L, both cut from one environment.
    """
    rows = []
    for L in sides:
        big, mid = make_box(d, 4 * L), make_box(d, 2 * L)

        def work(r: int, big=big, mid=mid, L=L) -> Tuple[float, float]:
            env = sample(law, big, derive_seed(seed, L, r))
            return corrector_ratio(shift_env(env, (L,) * d, mid), tol), gradient_gap(env, tol)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                values = np.array(list(pool.map(work, range(replicas))))
        else:
            values = np.array([work(r) for r in range(replicas)])
        se = values.std(axis=0, ddof=1) / np.sqrt(replicas) if replicas > 1 else np.full(2, np.nan)
        rows.append({
            "L": L,
            "corrector_ratio": float(values[:, 0].mean()),
            "corrector_ratio_se": float(se[0]),
            "gradient_gap": float(values[:, 1].mean()),
            "gradient_gap_se": float(se[1]),
        })
        logger.info(f"proxy trends L={L}: {rows[-1]}")
    return pd.DataFrame(rows)


# ------------------------------------------------------ sigma cross-check

@dataclass
class ConsistencyReport:
    L: int
    replicas: int
    sigma_sq: float
    sigma_sq_ci: List[float]
    variance_per_volume: float
    variance_per_volume_ci: List[float]
    relative_gap: float
    intervals_overlap: bool
    rtol: float

    @property
    def ok(self) -> bool:
        return self.relative_gap <= self.rtol and self.intervals_overlap

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["ok"] = self.ok
        return out


def sigma_consistency(estimate: SigmaEstimate, replicas: int = 2000, seed: int = 0,
                      tol: float = DEFAULT_TOL, threads: int = 1, bootstrap: int = 1000,
                      rtol: float = 0.2) -> ConsistencyReport:
    """
    Compare a limiting-variance estimate with Var(C)/L^d from replicas at the
    proxy side, in the same direction.
    """
    law = estimate.law
    L = estimate.proxy_L
    config = ExperimentConfig(
        d=estimate.d, sides=[L], law=law.kind, lam=law.lam, a=law.a, p=law.p,
        t=estimate.t.tolist(), replicas=replicas, seed=seed, tol=tol, threads=threads,
        quadrature_nodes=law.nodes,
    )
    records, _ = run_ceff(config)
    x = records_frame(records)["ceff"].to_numpy()
    if len(x) < 2:
        raise PreconditionError(f"cross-check needs at least 2 replicas, got {len(x)}")
    volume = float(L) ** estimate.d
    variance = float(np.var(x, ddof=1)) / volume

    rng = np.random.default_rng(seed)
    boot = x[rng.integers(0, len(x), size=(bootstrap, len(x)))].var(axis=1, ddof=1) / volume
    var_ci = [float(q) for q in np.percentile(boot, [2.5, 97.5])]
    half = 1.96 * estimate.sigma_sq_se
    sigma_ci = [estimate.sigma_sq - half, estimate.sigma_sq + half]

    if variance > 0:
        gap = abs(estimate.sigma_sq - variance) / variance
    else:
        gap = 0.0 if estimate.sigma_sq == 0 else float("inf")
    report = ConsistencyReport(
        L=L, replicas=len(x), sigma_sq=estimate.sigma_sq, sigma_sq_ci=sigma_ci,
        variance_per_volume=variance, variance_per_volume_ci=var_ci, relative_gap=float(gap),
        intervals_overlap=sigma_ci[0] <= var_ci[1] and var_ci[0] <= sigma_ci[1], rtol=rtol,
    )
    logger.info(f"sigma^2 {estimate.sigma_sq:.6g} vs Var/L^d {variance:.6g} at L={L}: "
                f"gap {gap:.3f}")
    return report
