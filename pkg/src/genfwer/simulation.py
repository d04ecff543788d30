"""Seeded Monte Carlo estimation of error rates and power.

Replicates are processed in fixed-size blocks. Block ``b`` draws from a
generator seeded by ``SeedSequence(seed, spawn_key=(b,))``, so replicate
``r`` always sees the same stream (block ``r // BLOCK_SIZE``, offset
``r % BLOCK_SIZE``) no matter how many workers run or in which order blocks
finish. Per-block sums are combined in block order after all workers join.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from . import adversarial as adv
from .core import PValueVector, TruthAssignment, as_rational, default_ids
from .errors import ConfigurationError, ParameterError
from .procedures import ProcedureSpec, StepdownConstants, harmonic_float

__all__ = [
    "BLOCK_SIZE",
    "SCENARIO_KINDS",
    "METRICS",
    "Scenario",
    "MetricEstimate",
    "SimulationReport",
    "SandwichCheck",
    "BoundCheck",
    "SharpnessReport",
    "block_rng",
    "generate",
    "generate_batch",
    "draw_replicates",
    "run_experiment",
    "check_markov_sandwich",
    "theorem31_j_oracle",
    "theorem32_bound_check",
    "ordered_union_event",
    "hommel_stress_betas",
    "run_sharpness",
    "binomial_se",
]

BLOCK_SIZE = 4096
SLACK_SE = 3.0

SCENARIO_KINDS = (
    "independent-uniform",
    "normal-means",
    "equicorrelated-normal",
    "adversarial-thm21",
    "adversarial-thm23",
    "adversarial-lemma31",
)
METRICS = ("kfwer", "fdp-exceed", "fdr", "avg-power")


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def binomial_se(p_hat: float, n: int) -> float:
    return math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)


def _pos_int(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
        raise ParameterError(f"{name} must be a positive integer, got {v!r}")
    return int(v)


@dataclass(frozen=True)
class Scenario:
    """A data-generating mechanism for ``s`` p-values.

    The first ``s0`` coordinates are true nulls. Kinds:

    ``independent-uniform``
        nulls i.i.d. uniform; false nulls exactly 0 (always detectable).
    ``normal-means``
        independent ``Z_i ~ N(mu_i, 1)`` with ``mu_i = effect`` for false
        nulls, one-sided p-values ``1 - Phi(Z_i)``.
    ``equicorrelated-normal``
        as ``normal-means`` with common correlation ``rho``.
    ``adversarial-thm21`` / ``adversarial-thm23`` / ``adversarial-lemma31``
        the sharp constructions from :mod:`genfwer.adversarial`. The lemma31
        kind applies the construction to the null block (``t = s0``, given
        ``betas``) with false nulls at 0.
    """

    kind: str
    s: int
    s0: int | None = None
    effect: float = 0.0
    rho: float = 0.0
    k: int | None = None
    i: int | None = None
    alpha: float | None = None
    inflation: float = 1.0
    betas: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ParameterError(f"unknown scenario kind {self.kind!r}; expected one of {', '.join(SCENARIO_KINDS)}")
        s = _pos_int(self.s, "s")
        object.__setattr__(self, "s", s)
        kind = self.kind
        if kind == "adversarial-thm21":
            if self.k is None:
                raise ParameterError("adversarial-thm21 requires k")
            s0 = s
        elif kind == "adversarial-thm23":
            if self.k is None or self.i is None or self.alpha is None:
                raise ParameterError("adversarial-thm23 requires k, i and alpha")
            adv.lemma21_betas_for_theorem23(s, self.k, self.i, self.alpha, self.inflation)
            s0 = s - (self.i - self.k)
        else:
            s0 = s if self.s0 is None else self.s0
        if self.s0 is not None and self.s0 != s0:
            raise ParameterError(f"{kind} fixes s0={s0}, got s0={self.s0}")
        if isinstance(s0, bool) or not isinstance(s0, (int, np.integer)) or not 0 <= s0 <= s:
            raise ParameterError(f"s0 must satisfy 0 <= s0 <= s, got {s0!r}")
        object.__setattr__(self, "s0", int(s0))
        if kind == "adversarial-thm21":
            adv._check_sk(s, self.k)
        if kind == "adversarial-lemma31":
            if self.betas is None:
                raise ParameterError("adversarial-lemma31 requires betas")
            if s0 == 0:
                raise ParameterError("adversarial-lemma31 needs at least one true null")
            betas = tuple(float(b) for b in self.betas)
            adv.hommel_bound(s0, betas)
            object.__setattr__(self, "betas", betas)
        if kind == "equicorrelated-normal":
            lo = -1.0 / (s - 1) if s > 1 else -math.inf
            if not lo <= self.rho < 1:
                raise ParameterError(f"rho={self.rho} gives a non-PSD correlation matrix for s={s}")
        if not math.isfinite(self.effect):
            raise ParameterError("effect must be finite")

    @property
    def null_mask(self) -> np.ndarray:
        if self.kind == "adversarial-thm23":
            m = np.ones(self.s, dtype=bool)
            m[: self.i - self.k] = False
            return m
        m = np.zeros(self.s, dtype=bool)
        m[: self.s0] = True
        return m

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "s": self.s, "s0": self.s0}
        if self.kind in ("normal-means", "equicorrelated-normal"):
            d["effect"] = self.effect
        if self.kind == "equicorrelated-normal":
            d["rho"] = self.rho
        if self.k is not None:
            d["k"] = self.k
        if self.i is not None:
            d["i"] = self.i
        if self.alpha is not None:
            d["alpha"] = float(self.alpha)
        if self.kind == "adversarial-thm23":
            d["inflation"] = self.inflation
        if self.betas is not None:
            d["betas"] = list(self.betas)
        return d


def _normal_pvalues(n: int, scn: Scenario, rng: np.random.Generator, rho: float) -> np.ndarray:
    s = scn.s
    e = rng.standard_normal((n, s))
    if rho != 0.0 and s > 1:
        # Z = sqrt(1-rho) e + b * sum(e) has unit variances and correlation rho for rho >= -1/(s-1)
        r = math.sqrt(1.0 - rho)
        b = (-r + math.sqrt(max(1.0 - rho + s * rho, 0.0))) / s
        e = r * e + b * e.sum(axis=1, keepdims=True)
    mu = np.where(scn.null_mask, 0.0, scn.effect)
    return ndtr(-(e + mu))


def generate_batch(scn: Scenario, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` replicate draws as a ``(n, s)`` array plus the true-null mask."""
    kind = scn.kind
    s, s0 = scn.s, scn.s0
    if kind == "independent-uniform":
        P = np.zeros((n, s))
        P[:, :s0] = rng.random((n, s0))
        return P, scn.null_mask
    if kind == "normal-means":
        return _normal_pvalues(n, scn, rng, 0.0), scn.null_mask
    if kind == "equicorrelated-normal":
        return _normal_pvalues(n, scn, rng, scn.rho), scn.null_mask
    if kind == "adversarial-thm21":
        return adv.theorem21_batch(n, s, scn.k, rng), scn.null_mask
    if kind == "adversarial-thm23":
        return adv.theorem23_batch(n, s, scn.k, scn.i, scn.alpha, rng, scn.inflation)
    P = np.zeros((n, s))
    P[:, :s0] = adv.lemma31_batch(n, s0, scn.betas, rng)
    return P, scn.null_mask


def generate(scn: Scenario, rng: np.random.Generator) -> tuple[PValueVector, TruthAssignment]:
    P, mask = generate_batch(scn, 1, rng)
    ids = default_ids(scn.s)
    return PValueVector(ids, P[0]), TruthAssignment.from_mask(ids, mask)


def _blocks(n: int) -> list[tuple[int, int]]:
    return [(b, min(BLOCK_SIZE, n - b * BLOCK_SIZE)) for b in range(math.ceil(n / BLOCK_SIZE))]


def draw_replicates(scn: Scenario, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """All ``n`` replicates, using the same block streams as :func:`run_experiment`."""
    n = _pos_int(n, "replicates")
    parts = [generate_batch(scn, size, block_rng(seed, b))[0] for b, size in _blocks(n)]
    return np.concatenate(parts, axis=0), scn.null_mask


@dataclass(frozen=True)
class MetricEstimate:
    estimate: float
    se: float
    n: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "se": self.se, "n": self.n}


@dataclass(frozen=True)
class SimulationReport:
    metrics: dict
    scenario: dict
    procedure: dict
    seed: int
    replicates: int
    k: int | None = None
    gamma: Fraction | None = None

    def __getitem__(self, name: str) -> MetricEstimate:
        return self.metrics[name]

    def to_dict(self) -> dict:
        return {
            "metrics": {m: e.to_dict() for m, e in self.metrics.items()},
            "replicates": self.replicates,
            "seed": self.seed,
            "scenario": self.scenario,
            "procedure": self.procedure,
            "metric_params": {
                "k": self.k,
                "gamma": None if self.gamma is None else str(self.gamma),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _block_sums(scn, procedure, thresholds, k, gamma, seed, block, size):
    rng = block_rng(seed, block)
    P, null = generate_batch(scn, size, rng)
    rej = procedure.reject_batch(P, thresholds)
    V = (rej & null).sum(axis=1)
    R = rej.sum(axis=1)
    T = (rej & ~null).sum(axis=1)
    n_false = int((~null).sum())
    fdp = V / np.maximum(R, 1)
    power = T / max(n_false, 1)
    out = {
        "kfwer": int((V >= k).sum()),
        "fdr": (float(fdp.sum()), float((fdp * fdp).sum())),
        "avg-power": (float(power.sum()), float((power * power).sum())),
    }
    if gamma is not None:
        # FDP > gamma  <=>  V * den > num * R, exactly
        out["fdp-exceed"] = int((V * gamma.denominator > gamma.numerator * R).sum())
    return out


def _mean_estimate(total: float, total_sq: float, n: int) -> MetricEstimate:
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return MetricEstimate(mean, math.sqrt(var / n), n)


def run_experiment(scn: Scenario, procedure: ProcedureSpec, metrics: Sequence[str] | None = None,
                   replicates: int = 100_000, seed: int = 0, workers: int = 1,
                   k: int | None = None, gamma=None) -> SimulationReport:
    """Estimate error rates and power of ``procedure`` under ``scn``.

    ``k`` (for the k-FWER metric) defaults to the procedure's ``k`` or 1;
    ``gamma`` (for ``fdp-exceed``) defaults to the procedure's ``gamma``.
    Probability metrics carry binomial standard errors; ``fdr`` and
    ``avg-power`` carry the plug-in standard error of a mean.
    """
    if not isinstance(procedure, ProcedureSpec):
        raise ConfigurationError("procedure must be a ProcedureSpec")
    if isinstance(replicates, bool) or not isinstance(replicates, (int, np.integer)) or replicates < 1:
        raise ConfigurationError(f"replicates must be a positive integer, got {replicates!r}")
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigurationError(f"seed must be a nonnegative integer, got {seed!r}")
    workers = _pos_int(workers, "workers")
    k = k if k is not None else (procedure.k or 1)
    k = _pos_int(k, "k")
    gamma = procedure.gamma if gamma is None else as_rational(gamma, "gamma")
    if gamma is not None and not 0 < gamma < 1:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")
    if metrics is None:
        metrics = [m for m in METRICS if m != "fdp-exceed" or gamma is not None]
    for m in metrics:
        if m not in METRICS:
            raise ConfigurationError(f"unknown metric {m!r}; expected one of {', '.join(METRICS)}")
        if m == "fdp-exceed" and gamma is None:
            raise ConfigurationError("metric fdp-exceed needs gamma")
    replicates = int(replicates)
    thresholds = procedure.thresholds(scn.s)

    def work(job):
        b, size = job
        return _block_sums(scn, procedure, thresholds, k, gamma, int(seed), b, size)

    jobs = _blocks(replicates)
    if workers == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))

    out = {}
    n = replicates
    for m in metrics:
        if m in ("kfwer", "fdp-exceed"):
            hits = sum(r[m] for r in results)
            p_hat = hits / n
            out[m] = MetricEstimate(p_hat, binomial_se(p_hat, n), n)
        else:
            tot = sum(r[m][0] for r in results)
            tot_sq = sum(r[m][1] for r in results)
            out[m] = _mean_estimate(tot, tot_sq, n)
    return SimulationReport(out, scn.to_dict(), procedure.to_dict(), int(seed), n, k, gamma)


@dataclass(frozen=True)
class SandwichCheck:
    lower: float
    middle: float
    upper: float
    slack_lower: float
    slack_upper: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_markov_sandwich(report: SimulationReport, gamma=None) -> SandwichCheck:
    """Check ``(FDR - g)/(1 - g) <= P{FDP > g} <= FDR/g`` on the estimates.

    Slack on each side is three combined standard errors of the quantities
    being compared.
    """
    if "fdr" not in report.metrics or "fdp-exceed" not in report.metrics:
        raise ConfigurationError("the Markov sandwich needs both fdr and fdp-exceed estimates")
    g = report.gamma if gamma is None else as_rational(gamma, "gamma")
    if g is None:
        raise ConfigurationError("gamma unknown for this report")
    if report.gamma is not None and g != report.gamma:
        raise ConfigurationError(f"gamma {g} differs from the report's {report.gamma}")
    gf = float(g)
    fdr, exc = report.metrics["fdr"], report.metrics["fdp-exceed"]
    lower = (fdr.estimate - gf) / (1 - gf)
    upper = fdr.estimate / gf
    slack_lo = SLACK_SE * math.hypot(fdr.se / (1 - gf), exc.se) + 1e-12
    slack_hi = SLACK_SE * math.hypot(fdr.se / gf, exc.se) + 1e-12
    ok = lower <= exc.estimate + slack_lo and exc.estimate <= upper + slack_hi
    return SandwichCheck(lower, exc.estimate, upper, slack_lo, slack_hi, ok)


def theorem31_j_oracle(false_null_p: Iterable[float], constants: StepdownConstants, gamma) -> int | None:
    """Smallest critical index at which FDP > gamma is still possible.

    With ``R_i`` the number of false-null p-values in ``(alpha_{i-1}, alpha_i]``
    (``R_1`` also counting everything at or below ``alpha_1``), returns the
    smallest ``m`` with ``m - (R_1 + ... + R_m) > m * gamma``, or ``None``.
    """
    g = as_rational(gamma, "gamma")
    if not 0 < g < 1:
        raise ParameterError(f"gamma must lie in (0, 1), got {g}")
    r = np.asarray(list(false_null_p), dtype=float)
    if r.size and not ((r >= 0) & (r <= 1)).all():
        raise ParameterError("false-null p-values must lie in [0, 1]")
    a = constants.alphas
    # number of r-hat at or below alpha_m, i.e. R_1 + ... + R_m
    cum = np.searchsorted(np.sort(r), a, side="right")
    m = np.arange(1, a.shape[0] + 1)
    hit = (m - cum) * g.denominator > m * g.numerator
    if not hit.any():
        return None
    return int(np.argmax(hit)) + 1


def ordered_union_event(Q: np.ndarray, betas: Sequence[float]) -> np.ndarray:
    """Per-row indicator of ``{q_(1) <= b_1} or ... or {q_(m) <= b_m}``."""
    b = np.asarray(betas, dtype=float)
    m = b.shape[0]
    if m == 0 or Q.shape[1] == 0:
        return np.zeros(Q.shape[0], dtype=bool)
    S = np.sort(Q, axis=1)[:, :m]
    return (S <= b[: S.shape[1]]).any(axis=1)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    n: int
    violations: int
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def theorem32_bound_check(P: np.ndarray, null_mask: np.ndarray, gamma, alpha) -> BoundCheck:
    """Compare ``P{FDP > gamma}`` of the FDP stepdown with the Simes-type union bound.

    The union is ``{q_(i) <= i * alpha / |I|}`` over ``i <= min(floor(gamma*s) + 1, |I|)``
    for the ordered true-null p-values ``q``. Passes when the left frequency
    exceeds the right by at most three combined standard errors.
    ``violations`` counts replicates where FDP > gamma without the union
    event, which the argument behind the bound rules out draw by draw.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    null = np.asarray(null_mask, dtype=bool)
    n, s = P.shape
    g = as_rational(gamma, "gamma")
    spec = ProcedureSpec("fdp-sd", alpha, gamma=g)
    n_null = int(null.sum())
    if n_null == 0:
        return BoundCheck(0.0, 0.0, 0.0, 0.0, n, 0, True)
    rej = spec.reject_batch(P)
    V = (rej & null).sum(axis=1)
    R = rej.sum(axis=1)
    exceed = V * g.denominator > g.numerator * R
    M = min((g.numerator * s) // g.denominator + 1, n_null)
    betas = np.arange(1, M + 1) * float(spec.alpha) / n_null
    union = ordered_union_event(P[:, null], betas)
    lhs, rhs = exceed.mean(), union.mean()
    se_l, se_r = binomial_se(lhs, n), binomial_se(rhs, n)
    violations = int((exceed & ~union).sum())
    ok = lhs <= rhs + SLACK_SE * math.hypot(se_l, se_r)
    return BoundCheck(float(lhs), float(rhs), se_l, se_r, n, violations, bool(ok))


def hommel_stress_betas(s: int, s0: int, gamma, alpha) -> tuple[float, ...]:
    """Null-block betas that make the union event as likely as the harmonic correction allows.

    ``b_i = i * alpha / (C_{floor(gamma*s)+1} * s0)`` for ``i <= min(floor(gamma*s)+1, s0)``.
    """
    g = as_rational(gamma, "gamma")
    a = float(as_rational(alpha, "alpha"))
    j = (g.numerator * s) // g.denominator + 1
    c = harmonic_float(j)
    M = min(j, s0)
    return tuple(i * a / (c * s0) for i in range(1, M + 1))


@dataclass(frozen=True)
class SharpnessReport:
    construction: str
    params: dict
    target: float
    estimate: float
    se: float
    z: float
    passed: bool
    replicates: int
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "construction": self.construction,
            "params": self.params,
            "target": self.target,
            "estimate": self.estimate,
            "se": self.se,
            "z": self.z,
            "pass": self.passed,
            "replicates": self.replicates,
            "seed": self.seed,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _sharp_event(construction: str, params: dict, n: int, rng: np.random.Generator):
    """Per-draw event indicators and the count of sure-branch failures (lemma21 only)."""
    if construction == "thm21":
        s, k = params["s"], params["k"]
        P = adv.theorem21_batch(n, s, k, rng)
        cut = ProcedureSpec("kfwer-ss", params["alpha"], k=k).thresholds(s)[0]
        return (P <= cut).sum(axis=1) >= k, 0
    if construction == "thm23":
        s, k, i = params["s"], params["k"], params["i"]
        P, _ = adv.theorem23_batch(n, s, k, i, params["alpha"], rng, params["inflation"])
        c = ProcedureSpec("kfwer-sd", params["alpha"], k=k).thresholds(s)[:i].copy()
        c[-1] *= params["inflation"]
        S = np.sort(P, axis=1)[:, :i]
        return (S <= c).all(axis=1), 0
    if construction == "lemma21":
        b = np.asarray(params["betas"], dtype=float)
        Q, branch = adv.lemma21_batch(n, b, params["u"], rng, return_branch=True)
        ok = (np.sort(Q, axis=1) <= b).all(axis=1)
        return ok, int((branch & ~ok).sum())
    if construction == "lemma31":
        P = adv.lemma31_batch(n, params["t"], params["betas"], rng)
        return ordered_union_event(P, params["betas"]), 0
    raise ConfigurationError(f"unknown construction {construction!r}")


def _sharp_target(construction: str, params: dict) -> float:
    if construction == "thm21":
        adv._check_sk(params["s"], params["k"])
        return float(as_rational(params["alpha"]))
    if construction == "thm23":
        betas, u = adv.lemma21_betas_for_theorem23(params["s"], params["k"], params["i"],
                                                   params["alpha"], params["inflation"])
        adv.check_lemma21_feasible(betas, u)
        return params["inflation"] * float(as_rational(params["alpha"]))
    if construction == "lemma21":
        b = adv.check_lemma21_feasible(params["betas"], params["u"])
        return float(b[-1] / params["u"])
    if construction == "lemma31":
        b = adv._check_hommel_betas(params["t"], params["betas"])
        bound = adv._hommel_sum(int(params["t"]), b)
        if bound > 1 + 1e-12:
            raise adv.InfeasibleConstructionError(
                f"Hommel bound t*sum (b_i - b_(i-1))/i = {bound:.6g} exceeds 1"
            )
        return min(bound, 1.0)
    raise ConfigurationError(f"unknown construction {construction!r}; expected thm21, thm23, lemma21 or lemma31")


def run_sharpness(construction: str, params: dict, replicates: int = 100_000, seed: int = 0,
                  workers: int = 1) -> SharpnessReport:
    """Estimate the probability a sharp construction assigns to its extremal event.

    The pass flag requires ``|z| <= 3`` with ``z`` standardised by the
    binomial SE at the target value.
    """
    params = dict(params)
    if construction == "thm23":
        params.setdefault("inflation", 1.0)
    target = _sharp_target(construction, params)
    n = replicates
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"replicates must be a positive integer, got {n!r}")
    workers = _pos_int(workers, "workers")

    def work(job):
        b, size = job
        ev, bad = _sharp_event(construction, params, size, block_rng(int(seed), b))
        return int(ev.sum()), bad

    jobs = _blocks(int(n))
    if workers == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    hits = sum(r[0] for r in results)
    bad = sum(r[1] for r in results)
    est = hits / n
    se0 = binomial_se(target, n)
    if se0 > 0:
        z = (est - target) / se0
    else:
        z = 0.0 if est == target else math.inf
    extra = {}
    if construction == "lemma21":
        extra["certainty_violations"] = bad
    passed = abs(z) <= SLACK_SE and bad == 0
    echo = {key: (list(map(float, v)) if isinstance(v, (list, tuple, np.ndarray)) else
                  float(v) if isinstance(v, (float, Fraction)) else v)
            for key, v in params.items()}
    return SharpnessReport(construction, echo, target, est, binomial_se(est, n), z, passed,
                           int(n), int(seed), extra)
