"""Critical constants, stepdown/stepup engines, and adjusted p-values.

Every constant family here has the form ``alpha_i = alpha * num_i / den_i``
with integer ``num_i``, ``den_i`` that depend only on ``s``, ``k`` and
``gamma``. Constants are evaluated as a single correctly rounded division of
exact integers, so identities such as "k-FWER stepdown with k=1 is Holm" hold
bit for bit, and floors like ``floor(gamma * i)`` never suffer binary
rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import OrderedPValues, PValueVector, RejectionSet, as_rational, order_pvalues
from .errors import DimensionError, ParameterError, UnsupportedMethodError

__all__ = [
    "METHODS",
    "StepdownConstants",
    "AdjustmentRow",
    "AdjustmentReport",
    "ProcedureSpec",
    "constants_holm",
    "constants_bonferroni",
    "constants_kfwer_singlestep",
    "constants_kfwer_stepdown",
    "constants_fdp_stepdown",
    "constants_fdp_hommel",
    "custom_constants",
    "make_constants",
    "harmonic",
    "harmonic_float",
    "stepdown",
    "stepdown_rank",
    "singlestep_kfwer",
    "bh_thresholds",
    "stepup_bh",
    "adjusted_pvalues",
    "automatic_k_minus_1_option",
    "apply_procedure",
    "stepdown_batch",
    "stepup_batch",
]

METHODS = ("bonferroni", "holm", "kfwer-ss", "kfwer-sd", "fdp-sd", "fdp-hommel", "bh")
STEPDOWN_METHODS = ("bonferroni", "holm", "kfwer-ss", "kfwer-sd", "fdp-sd", "fdp-hommel")

# Above this index the exact harmonic number has too many digits to be worth it.
_EXACT_HARMONIC_MAX = 400
_FLOAT_EXACT_INT = 2**53


def _check_alpha(alpha, name="alpha") -> Fraction:
    a = as_rational(alpha, name)
    if not 0 < a < 1:
        raise ParameterError(f"{name} must lie in (0, 1), got {a}")
    return a


def _check_s(s) -> int:
    if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or s < 1:
        raise ParameterError(f"s must be a positive integer, got {s!r}")
    return int(s)


def _check_k(k, s: int) -> int:
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k!r}")
    if k > s:
        raise ParameterError(f"k={k} exceeds the number of hypotheses s={s}")
    return int(k)


def _check_gamma(gamma) -> Fraction:
    g = as_rational(gamma, "gamma")
    if not 0 < g < 1:
        raise ParameterError(f"gamma must lie in (0, 1), got {g}")
    return g


def harmonic(j: int) -> Fraction:
    """Exact harmonic number ``1 + 1/2 + ... + 1/j``."""
    if isinstance(j, bool) or not isinstance(j, (int, np.integer)) or j < 1:
        raise ParameterError(f"harmonic number index must be >= 1, got {j!r}")
    num, den = 0, 1
    for i in range(1, int(j) + 1):
        num, den = num * i + den, den * i
        g = math.gcd(num, den)
        num //= g
        den //= g
    return Fraction(num, den)


def harmonic_float(j: int) -> float:
    if j <= _EXACT_HARMONIC_MAX:
        return float(harmonic(j))
    return math.fsum(1.0 / i for i in range(1, j + 1))


def _divide(num: Sequence[int], den: Sequence[int]) -> np.ndarray:
    """Correctly rounded ``num[i] / den[i]`` for Python ints."""
    if max(num) < _FLOAT_EXACT_INT and max(den) < _FLOAT_EXACT_INT:
        # Both operands are exact doubles, so IEEE division rounds once.
        return np.asarray(num, dtype=float) / np.asarray(den, dtype=float)
    return np.array([n / d for n, d in zip(num, den)], dtype=float)


@dataclass(frozen=True)
class StepdownConstants:
    """Nondecreasing critical values ``alpha_1 <= ... <= alpha_s``.

    ``ratios`` holds the integer pairs ``(num_i, den_i)`` with
    ``alpha_i = alpha * num_i / den_i`` for families that scale linearly in
    ``alpha``; it is ``None`` for custom vectors.
    """

    alphas: np.ndarray = field(repr=False)
    method: str
    s: int
    alpha: Fraction | None = None
    k: int | None = None
    gamma: Fraction | None = None
    ratios: tuple[tuple[int, ...], tuple[int, ...]] | None = field(default=None, repr=False)

    def __post_init__(self):
        a = np.array(self.alphas, dtype=float).reshape(-1)
        if a.shape[0] != self.s:
            raise DimensionError(f"{a.shape[0]} constants for s={self.s}")
        if not ((a >= 0) & (a <= 1)).all():
            raise ParameterError("critical values must lie in [0, 1]")
        if (np.diff(a) < 0).any():
            i = int(np.flatnonzero(np.diff(a) < 0)[0]) + 1
            raise ParameterError(f"critical values must be nondecreasing; alpha_{i} > alpha_{i + 1}")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    def __len__(self) -> int:
        return self.s

    def __getitem__(self, i):
        return self.alphas[i]

    @property
    def params(self) -> dict:
        return {
            "s": self.s,
            "k": self.k,
            "gamma": None if self.gamma is None else str(self.gamma),
            "alpha": None if self.alpha is None else float(self.alpha),
        }


def _build(method, s, alpha, num, den, k=None, gamma=None) -> StepdownConstants:
    a, b = alpha.numerator, alpha.denominator
    alphas = _divide([n * a for n in num], [d * b for d in den])
    return StepdownConstants(alphas, method, s, alpha, k, gamma, (tuple(num), tuple(den)))


def constants_holm(s: int, alpha) -> StepdownConstants:
    s = _check_s(s)
    alpha = _check_alpha(alpha)
    return _build("holm", s, alpha, [1] * s, [s - i + 1 for i in range(1, s + 1)])


def constants_bonferroni(s: int, alpha) -> StepdownConstants:
    """Bonferroni as a (flat) stepdown vector; stepping down changes nothing."""
    s = _check_s(s)
    alpha = _check_alpha(alpha)
    return _build("bonferroni", s, alpha, [1] * s, [s] * s)


def constants_kfwer_singlestep(s: int, k: int, alpha) -> StepdownConstants:
    s = _check_s(s)
    k = _check_k(k, s)
    alpha = _check_alpha(alpha)
    return _build("kfwer-ss", s, alpha, [k] * s, [s] * s, k=k)


def constants_kfwer_stepdown(s: int, k: int, alpha) -> StepdownConstants:
    """``k*alpha/s`` for the first ``k`` steps, then ``k*alpha/(s + k - i)``."""
    s = _check_s(s)
    k = _check_k(k, s)
    alpha = _check_alpha(alpha)
    den = [s if i <= k else s + k - i for i in range(1, s + 1)]
    return _build("kfwer-sd", s, alpha, [k] * s, den, k=k)


def _fdp_ratios(s: int, gamma: Fraction) -> tuple[list[int], list[int]]:
    gn, gd = gamma.numerator, gamma.denominator
    num, den = [], []
    for i in range(1, s + 1):
        f = (gn * i) // gd
        num.append(f + 1)
        den.append(s + f + 1 - i)
    return num, den


def constants_fdp_stepdown(s: int, gamma, alpha) -> StepdownConstants:
    """``(floor(gamma*i) + 1) * alpha / (s + floor(gamma*i) + 1 - i)``.

    ``gamma`` must be exact: pass a string such as ``"0.1"`` or ``"1/10"``,
    a :class:`~fractions.Fraction`, or a float (read via its shortest decimal).
    """
    s = _check_s(s)
    gamma = _check_gamma(gamma)
    alpha = _check_alpha(alpha)
    num, den = _fdp_ratios(s, gamma)
    return _build("fdp-sd", s, alpha, num, den, gamma=gamma)


def constants_fdp_hommel(s: int, gamma, alpha) -> StepdownConstants:
    """FDP stepdown constants divided by ``C_{floor(gamma*s) + 1}``.

    Valid under arbitrary dependence.
    """
    s = _check_s(s)
    gamma = _check_gamma(gamma)
    alpha = _check_alpha(alpha)
    num, den = _fdp_ratios(s, gamma)
    j = (gamma.numerator * s) // gamma.denominator + 1
    if j <= _EXACT_HARMONIC_MAX:
        c = harmonic(j)
        num = [n * c.denominator for n in num]
        den = [d * c.numerator for d in den]
        return _build("fdp-hommel", s, alpha, num, den, gamma=gamma)
    base = _build("fdp-sd", s, alpha, num, den, gamma=gamma)
    return StepdownConstants(base.alphas / harmonic_float(j), "fdp-hommel", s, alpha, None, gamma, None)


def custom_constants(alphas: Sequence[float], alpha=None) -> StepdownConstants:
    arr = np.asarray(alphas, dtype=float).reshape(-1)
    return StepdownConstants(
        arr, "custom", arr.shape[0], None if alpha is None else _check_alpha(alpha)
    )


def make_constants(method: str, s: int, alpha, k: int | None = None, gamma=None) -> StepdownConstants:
    if method == "holm":
        return constants_holm(s, alpha)
    if method == "bonferroni":
        return constants_bonferroni(s, alpha)
    if method in ("kfwer-ss", "kfwer-sd"):
        if k is None:
            raise ParameterError(f"method {method} requires k")
        if method == "kfwer-ss":
            return constants_kfwer_singlestep(s, k, alpha)
        return constants_kfwer_stepdown(s, k, alpha)
    if method in ("fdp-sd", "fdp-hommel"):
        if gamma is None:
            raise ParameterError(f"method {method} requires gamma")
        if method == "fdp-sd":
            return constants_fdp_stepdown(s, gamma, alpha)
        return constants_fdp_hommel(s, gamma, alpha)
    if method == "bh":
        raise UnsupportedMethodError("bh is a stepup procedure and has no stepdown constants")
    raise ParameterError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def stepdown_rank(sorted_p: np.ndarray, alphas: np.ndarray) -> int:
    """Largest ``r`` with ``p_(j) <= alpha_j`` for every ``j <= r`` (0 if none)."""
    ok = sorted_p <= alphas
    if ok.all():
        return ok.shape[0]
    return int(np.argmin(ok))


def stepdown(ord: OrderedPValues, c: StepdownConstants) -> RejectionSet:
    if c.s != ord.s:
        raise DimensionError(f"{c.s} constants for {ord.s} p-values")
    r = stepdown_rank(ord.sorted_p, c.alphas)
    return RejectionSet(ord.ids_at_ranks(r))


def singlestep_kfwer(pv: PValueVector, k: int, alpha) -> RejectionSet:
    """Reject every hypothesis with ``p <= k * alpha / s``."""
    c = constants_kfwer_singlestep(pv.s, k, alpha)
    t = c.alphas[0]
    return RejectionSet(i for i, p in zip(pv.ids, pv.p) if p <= t)


def _bh_ratios(s: int, harmonic_correction: bool) -> tuple[list[int], list[int]] | None:
    num = list(range(1, s + 1))
    den = [s] * s
    if not harmonic_correction:
        return num, den
    if s > _EXACT_HARMONIC_MAX:
        return None
    c = harmonic(s)
    return [n * c.denominator for n in num], [d * c.numerator for d in den]


def bh_thresholds(s: int, q, harmonic_correction: bool = False) -> np.ndarray:
    """Stepup thresholds ``r*q/s``; with ``harmonic_correction`` q becomes ``q/C_s``."""
    s = _check_s(s)
    q = _check_alpha(q, "q")
    ratios = _bh_ratios(s, harmonic_correction)
    if ratios is None:
        return _divide([r * q.numerator for r in range(1, s + 1)], [s * q.denominator] * s) / harmonic_float(s)
    num, den = ratios
    return _divide([n * q.numerator for n in num], [d * q.denominator for d in den])


def stepup_bh(ord: OrderedPValues, q, harmonic_correction: bool = False) -> RejectionSet:
    """Benjamini-Hochberg stepup. A comparison baseline only.

    Rejects ranks ``1..r*`` with ``r*`` the largest ``r`` such that
    ``p_(r) <= r*q/s``. Its FDR guarantee needs dependence assumptions
    unless ``harmonic_correction`` is set.
    """
    t = bh_thresholds(ord.s, q, harmonic_correction)
    ok = ord.sorted_p <= t
    r = 0 if not ok.any() else ord.s - int(np.argmax(ok[::-1]))
    return RejectionSet(ord.ids_at_ranks(r))


def automatic_k_minus_1_option(rej: RejectionSet, ord: OrderedPValues, k: int, enabled: bool = True) -> RejectionSet:
    """Add the ``k - 1`` smallest-p hypotheses to ``rej``.

    Off by default at the procedure level: rejecting them regardless of the
    data is permitted for k-FWER control but rarely sensible.
    """
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k!r}")
    if not enabled or k == 1:
        return rej
    return rej.union(ord.ids_at_ranks(min(int(k) - 1, ord.s)))


@dataclass(frozen=True)
class AdjustmentRow:
    id: str
    p: float
    rank: int
    threshold: float
    rejected: bool
    adjusted_p: float

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "p": self.p,
            "rank": self.rank,
            "threshold": self.threshold,
            "rejected": self.rejected,
            "adjusted_p": self.adjusted_p,
        }


@dataclass(frozen=True)
class AdjustmentReport:
    """Per-hypothesis decisions, in input order."""

    rows: tuple[AdjustmentRow, ...]
    method: str
    params: dict
    n_rejected: int
    baseline: bool = False

    @property
    def rejected(self) -> RejectionSet:
        return RejectionSet(r.id for r in self.rows if r.rejected)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "params": dict(self.params),
            "n_rejected": self.n_rejected,
            "s": len(self.rows),
        }
        if self.baseline:
            out["note"] = "comparison baseline: FDR control requires dependence assumptions"
        out["hypotheses"] = [r.to_dict() for r in self.rows]
        return out


@dataclass(frozen=True)
class ProcedureSpec:
    """A named procedure with its parameters, applicable to any ``s``."""

    method: str
    alpha: Fraction
    k: int | None = None
    gamma: Fraction | None = None
    harmonic_correction: bool = False
    reject_k_minus_1: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        if self.method in ("kfwer-ss", "kfwer-sd"):
            if self.k is None:
                raise ParameterError(f"method {self.method} requires k")
            if isinstance(self.k, bool) or not isinstance(self.k, (int, np.integer)) or self.k < 1:
                raise ParameterError(f"k must be a positive integer, got {self.k!r}")
            object.__setattr__(self, "k", int(self.k))
        elif self.k is not None:
            raise ParameterError(f"method {self.method} takes no k")
        if self.method in ("fdp-sd", "fdp-hommel"):
            if self.gamma is None:
                raise ParameterError(f"method {self.method} requires gamma")
            object.__setattr__(self, "gamma", _check_gamma(self.gamma))
        elif self.gamma is not None:
            raise ParameterError(f"method {self.method} takes no gamma")
        if self.harmonic_correction and self.method != "bh":
            raise ParameterError("harmonic_correction applies to bh only")
        if self.reject_k_minus_1 and self.k is None:
            raise ParameterError("reject_k_minus_1 applies to k-FWER methods only")

    @property
    def is_stepup(self) -> bool:
        return self.method == "bh"

    def constants(self, s: int) -> StepdownConstants:
        return make_constants(self.method, s, self.alpha, self.k, self.gamma)

    def thresholds(self, s: int) -> np.ndarray:
        if self.is_stepup:
            return bh_thresholds(s, self.alpha, self.harmonic_correction)
        return self.constants(s).alphas

    def reject(self, ord: OrderedPValues) -> RejectionSet:
        if self.is_stepup:
            return stepup_bh(ord, self.alpha, self.harmonic_correction)
        rej = stepdown(ord, self.constants(ord.s))
        if self.reject_k_minus_1:
            rej = automatic_k_minus_1_option(rej, ord, self.k)
        return rej

    def reject_batch(self, P: np.ndarray, thresholds: np.ndarray | None = None) -> np.ndarray:
        """Boolean rejection mask for each row of ``P`` (replicates x hypotheses)."""
        if thresholds is None:
            thresholds = self.thresholds(P.shape[1])
        if self.is_stepup:
            return stepup_batch(P, thresholds)
        mask = stepdown_batch(P, thresholds)
        if self.reject_k_minus_1 and self.k > 1:
            m = min(self.k - 1, P.shape[1])
            first = np.argsort(P, axis=1, kind="stable")[:, :m]
            np.put_along_axis(mask, first, True, axis=1)
        return mask

    def to_dict(self) -> dict:
        d = {"method": self.method, "alpha": float(self.alpha)}
        if self.k is not None:
            d["k"] = self.k
        if self.gamma is not None:
            d["gamma"] = str(self.gamma)
        if self.harmonic_correction:
            d["harmonic_correction"] = True
        if self.reject_k_minus_1:
            d["reject_k_minus_1"] = True
        return d


def adjusted_pvalues(ord: OrderedPValues, method: str, alpha, k: int | None = None, gamma=None,
                     harmonic_correction: bool = False) -> AdjustmentReport:
    """Smallest level at which each hypothesis is rejected, plus decisions at ``alpha``.

    For stepdown families ``alpha_j = alpha * c_j`` and the adjusted p-value
    at rank ``i`` is ``min(1, max_{j <= i} p_(j) / c_j)``. For ``bh`` it is
    the usual stepup form ``min(1, min_{j >= i} p_(j) * s / j)``.
    """
    spec = ProcedureSpec(method, alpha, k, gamma, harmonic_correction)
    s = ord.s
    sp = ord.sorted_p
    if spec.is_stepup:
        thresholds = bh_thresholds(s, spec.alpha, harmonic_correction)
        ratios = _bh_ratios(s, harmonic_correction)
        if ratios is None:
            scaled = sp * (s * harmonic_float(s)) / np.arange(1, s + 1)
        else:
            num, den = ratios
            scaled = sp * _divide(den, num)
        adj = np.minimum.accumulate(scaled[::-1])[::-1]
        rejected = stepup_bh(ord, spec.alpha, harmonic_correction)
    else:
        c = spec.constants(s)
        if c.ratios is None:
            ratio = c.alphas / float(c.alpha)
        else:
            num, den = c.ratios
            ratio = _divide(num, den)
        thresholds = c.alphas
        adj = np.maximum.accumulate(sp / ratio)
        rejected = stepdown(ord, c)
    adj = np.minimum(adj, 1.0)
    rows = [None] * s
    for r, j in enumerate(ord.order):
        i = ord.source.ids[j]
        rows[j] = AdjustmentRow(i, float(sp[r]), r + 1, float(thresholds[r]), i in rejected, float(adj[r]))
    params = {"s": s, "alpha": float(spec.alpha)}
    if spec.k is not None:
        params["k"] = spec.k
    if spec.gamma is not None:
        params["gamma"] = str(spec.gamma)
    if harmonic_correction:
        params["harmonic_correction"] = True
    return AdjustmentReport(tuple(rows), method, params, rejected.count, baseline=spec.is_stepup)


def apply_procedure(pv: PValueVector, spec: ProcedureSpec) -> AdjustmentReport:
    if spec.reject_k_minus_1:
        raise UnsupportedMethodError("adjusted p-values are not defined with automatic k-1 rejections")
    return adjusted_pvalues(order_pvalues(pv), spec.method, spec.alpha, spec.k, spec.gamma,
                            spec.harmonic_correction)


def stepdown_batch(P: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Vectorised stepdown over the rows of ``P``; returns the rejection mask."""
    n, s = P.shape
    if alphas.shape[0] != s:
        raise DimensionError(f"{alphas.shape[0]} constants for {s} p-values")
    S = np.sort(P, axis=1)
    ok = S <= alphas
    r = np.where(ok.all(axis=1), s, ok.argmin(axis=1))
    cut = np.where(r > 0, S[np.arange(n), np.maximum(r - 1, 0)], -np.inf)
    return P <= cut[:, None]


def stepup_batch(P: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    n, s = P.shape
    if thresholds.shape[0] != s:
        raise DimensionError(f"{thresholds.shape[0]} thresholds for {s} p-values")
    S = np.sort(P, axis=1)
    ok = S <= thresholds
    any_ok = ok.any(axis=1)
    r = np.where(any_ok, s - ok[:, ::-1].argmax(axis=1), 0)
    cut = np.where(r > 0, S[np.arange(n), np.maximum(r - 1, 0)], -np.inf)
    return P <= cut[:, None]
