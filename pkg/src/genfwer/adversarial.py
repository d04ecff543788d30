"""Joint p-value distributions that make the control bounds tight.

Each sampler comes in two forms: a ``sample_*`` function returning one draw
as package types, and a ``*_batch`` function returning ``n`` draws as a
``(n, width)`` array for Monte Carlo use. Both take an injected
``numpy.random.Generator``; nothing here touches global random state.

All marginals produced for true nulls are exactly uniform, either on
``(0, 1)`` or on the stated sub-interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import PValueVector, TruthAssignment, default_ids
from .errors import DegenerateParameterError, InfeasibleConstructionError, ParameterError
from .procedures import constants_kfwer_stepdown

__all__ = [
    "MAX_LEMMA21_DEPTH",
    "AdversarialDraw",
    "open_uniform",
    "check_lemma21_feasible",
    "lemma21_betas_for_theorem23",
    "hommel_bound",
    "sample_theorem21",
    "sample_lemma21",
    "sample_theorem23",
    "sample_lemma31",
    "theorem21_batch",
    "lemma21_batch",
    "theorem23_batch",
    "lemma31_batch",
]

MAX_LEMMA21_DEPTH = 64


@dataclass(frozen=True)
class AdversarialDraw:
    pvalues: PValueVector
    truth: TruthAssignment
    construction: str
    params: dict = field(default_factory=dict)


def open_uniform(rng: np.random.Generator, low, high, size=None) -> np.ndarray:
    """Uniform on the open interval ``(low, high)``.

    Endpoints are excluded so that strict/weak inequalities against the
    interval ends come out as the constructions intend.
    """
    u = (rng.integers(0, 2**53, size=size) + 0.5) * 2.0**-53
    return low + (high - low) * u


def _random_subset_mask(rng: np.random.Generator, n: int, width: int, k: int) -> np.ndarray:
    """``(n, width)`` mask with exactly ``k`` uniformly chosen True entries per row."""
    keys = rng.random((n, width))
    idx = np.argpartition(keys, k - 1, axis=1)[:, :k] if k < width else np.broadcast_to(np.arange(width), (n, width))
    mask = np.zeros((n, width), dtype=bool)
    np.put_along_axis(mask, np.asarray(idx), True, axis=1)
    return mask


def _check_sk(s, k):
    for name, v in (("s", s), ("k", k)):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v!r}")
    if k > s:
        raise ParameterError(f"k={k} exceeds s={s}")
    return int(s), int(k)


# ---------------------------------------------------------------- single-step


def theorem21_batch(n: int, s: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` random coordinates share ``U1 ~ U(0, k/s)``; the rest share ``U2 ~ U(k/s, 1)``."""
    s, k = _check_sk(s, k)
    cut = k / s
    u1 = open_uniform(rng, 0.0, cut, n)
    u2 = open_uniform(rng, cut, 1.0, n) if k < s else np.full(n, np.nan)
    planted = _random_subset_mask(rng, n, s, k)
    return np.where(planted, u1[:, None], u2[:, None])


def sample_theorem21(s: int, k: int, rng: np.random.Generator) -> AdversarialDraw:
    p = theorem21_batch(1, s, k, rng)[0]
    ids = default_ids(s)
    return AdversarialDraw(PValueVector(ids, p), TruthAssignment.all_null(ids), "thm21", {"s": s, "k": k})


# ---------------------------------------------------------------- ordered thresholds with a sure branch


def check_lemma21_feasible(betas: Sequence[float], u: float) -> np.ndarray:
    """Validate ``0 < beta_1 <= ... <= beta_k <= u`` and ``j (b_j - b_{j-1}) / b_j <= 1``."""
    b = np.asarray(betas, dtype=float).reshape(-1)
    k = b.shape[0]
    if k == 0:
        raise ParameterError("need at least one beta")
    if k > MAX_LEMMA21_DEPTH:
        raise ParameterError(f"k={k} exceeds the supported recursion depth {MAX_LEMMA21_DEPTH}")
    if not np.isfinite(b).all() or not np.isfinite(u):
        raise ParameterError("betas and u must be finite")
    if not 0 < u <= 1:
        raise ParameterError(f"u must lie in (0, 1], got {u}")
    if (np.diff(b) < 0).any():
        j = int(np.flatnonzero(np.diff(b) < 0)[0]) + 2
        raise InfeasibleConstructionError(f"betas must be nondecreasing (beta_{j} < beta_{j - 1})")
    if b[0] < 0:
        raise ParameterError("betas must be positive")
    if b[0] == 0:
        if k >= 2:
            raise DegenerateParameterError("beta_1 = 0 leaves the mixing weight theta undefined")
        raise ParameterError("beta_1 must be positive")
    if b[-1] > u:
        raise InfeasibleConstructionError(f"beta_k = {b[-1]} exceeds u = {u}")
    for j in range(2, k + 1):
        lhs = j * (b[j - 1] - b[j - 2]) / b[j - 1]
        # a few ulps of slack: the unimprovability betas hit the boundary in exact arithmetic
        if lhs > 1 + 1e-12:
            raise InfeasibleConstructionError(
                f"condition j*(beta_j - beta_(j-1))/beta_j <= 1 fails at j={j}: {lhs:.6g}"
            )
    return b


def _lemma21_tilde(n: int, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``k`` values each uniform on ``(0, b_k)`` whose order statistics satisfy ``q_(j) <= b_j`` surely."""
    k = b.shape[0]
    if k == 1:
        return open_uniform(rng, 0.0, b[0], (n, 1))
    y = _lemma21_tilde(n, b[:-1], rng)
    bk, bk1 = b[-1], b[-2]
    theta = (1.0 - k * (bk - bk1) / bk) / bk1
    lower = np.concatenate(([0.0], b[:-1]))
    widths = b - lower
    weights = theta * widths[:-1]
    w_last = max(1.0 - theta * bk1, 0.0)
    probs = np.append(np.maximum(weights, 0.0), w_last)
    probs = probs / probs.sum()
    comp = np.minimum(np.searchsorted(np.cumsum(probs), rng.random(n), side="right"), k - 1)
    # zero-width components carry zero weight and are never selected
    yk = open_uniform(rng, lower[comp], b[comp], comp.shape)
    allv = np.concatenate([y, yk[:, None]], axis=1)
    perm = np.argsort(rng.random((n, k)), axis=1)
    return np.take_along_axis(allv, perm, axis=1)


def lemma21_batch(n: int, betas: Sequence[float], u: float, rng: np.random.Generator,
                  return_branch: bool = False):
    """``n`` draws of ``k`` values, each marginally uniform on ``(0, u)``.

    ``P{q_(1) <= b_1, ..., q_(k) <= b_k} = b_k / u``. With ``return_branch``
    also returns the boolean array marking draws from the sure-success branch.
    """
    b = check_lemma21_feasible(betas, u)
    k = b.shape[0]
    branch = rng.random(n) < b[-1] / u
    out = open_uniform(rng, b[-1], u, (n, k)) if b[-1] < u else np.empty((n, k))
    m = int(branch.sum())
    if m:
        out[branch] = _lemma21_tilde(m, b, rng)
    if return_branch:
        return out, branch
    return out


def sample_lemma21(betas: Sequence[float], u: float, rng: np.random.Generator) -> list[float]:
    return lemma21_batch(1, betas, u, rng)[0].tolist()


# ---------------------------------------------------------------- unimprovability of a single constant


def lemma21_betas_for_theorem23(s: int, k: int, i: int, alpha, inflation: float = 1.0) -> tuple[np.ndarray, float]:
    """``(betas, u)`` for the unimprovability construction at step ``i``.

    ``betas`` are the k-FWER stepdown constants ``alpha_{i-k+1..i}``, with the
    last optionally multiplied by ``inflation``; ``u = k / (s + k - i)``.
    """
    s, k = _check_sk(s, k)
    if isinstance(i, bool) or not isinstance(i, (int, np.integer)) or not k <= i <= s:
        raise ParameterError(f"step i must satisfy k <= i <= s, got i={i!r}")
    if not inflation >= 1:
        raise ParameterError(f"inflation factor must be >= 1, got {inflation}")
    if inflation > 1 and not inflation < s / k:
        raise ParameterError(f"inflation factor must be below s/k = {s / k:g}")
    c = constants_kfwer_stepdown(s, k, alpha).alphas
    betas = np.array(c[i - k:i], dtype=float)
    betas[-1] *= inflation
    return betas, k / (s + k - i)


def theorem23_batch(n: int, s: int, k: int, i: int, alpha, rng: np.random.Generator,
                    inflation: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Draws for which the first ``i`` stepdown conditions hold with probability ``alpha``.

    Returns ``(P, null_mask)``. The first ``i - k`` coordinates are exactly 0
    and flagged as false nulls; the rest are marginally uniform true nulls.
    With ``inflation = c`` the last constant is taken as ``c * alpha_i`` and
    the probability becomes ``c * alpha``.
    """
    betas, u = lemma21_betas_for_theorem23(s, k, i, alpha, inflation)
    s, k = int(s), int(k)
    if i == k and inflation == 1.0:
        P = theorem21_batch(n, s, k, rng)
        return P, np.ones(s, dtype=bool)
    if inflation == 1.0:
        try:
            check_lemma21_feasible(betas, u)
        except InfeasibleConstructionError as exc:  # pragma: no cover - would be a bug in the constants
            raise AssertionError(f"unimprovability betas failed the ordered-threshold feasibility condition: {exc}") from exc
    zeros = i - k
    width = s - zeros
    P = np.zeros((n, s))
    planted = _random_subset_mask(rng, n, width, k)
    block = np.empty((n, width))
    block[planted] = lemma21_batch(n, betas, u, rng).reshape(-1)
    rest = width - k
    if rest:
        block[~planted] = open_uniform(rng, u, 1.0, n * rest)
    P[:, zeros:] = block
    null_mask = np.ones(s, dtype=bool)
    null_mask[:zeros] = False
    return P, null_mask


def sample_theorem23(s: int, k: int, i: int, alpha, rng: np.random.Generator,
                     inflation: float = 1.0) -> AdversarialDraw:
    P, mask = theorem23_batch(1, s, k, i, alpha, rng, inflation)
    ids = default_ids(s)
    return AdversarialDraw(
        PValueVector(ids, P[0]),
        TruthAssignment.from_mask(ids, mask),
        "thm23",
        {"s": s, "k": k, "i": i, "alpha": float(alpha), "inflation": inflation},
    )


# ---------------------------------------------------------------- union of ordered events under arbitrary dependence


def _check_hommel_betas(t: int, betas: Sequence[float]) -> np.ndarray:
    if isinstance(t, bool) or not isinstance(t, (int, np.integer)) or t < 1:
        raise ParameterError(f"t must be a positive integer, got {t!r}")
    b = np.asarray(betas, dtype=float).reshape(-1)
    if b.shape[0] == 0:
        raise ParameterError("need at least one beta")
    if b.shape[0] > t:
        raise ParameterError(f"m={b.shape[0]} betas exceed t={t}")
    if not ((b >= 0) & (b <= 1)).all():
        raise ParameterError("betas must lie in [0, 1]")
    if (np.diff(b) < 0).any():
        j = int(np.flatnonzero(np.diff(b) < 0)[0]) + 2
        raise InfeasibleConstructionError(f"betas must be nondecreasing (beta_{j} < beta_{j - 1})")
    return b


def _hommel_sum(t: int, b: np.ndarray) -> float:
    diffs = np.diff(np.concatenate(([0.0], b)))
    return float(t * np.sum(diffs / np.arange(1, b.shape[0] + 1)))


def hommel_bound(t: int, betas: Sequence[float]) -> float:
    """Upper bound ``t * sum_i (b_i - b_{i-1}) / i`` on ``P{some p_(i) <= b_i}``, capped at 1."""
    b = _check_hommel_betas(t, betas)
    return min(1.0, _hommel_sum(int(t), b))


def lemma31_batch(n: int, t: int, betas: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """``t`` uniform p-values whose union event has probability exactly the Hommel bound."""
    b = _check_hommel_betas(t, betas)
    t = int(t)
    m = b.shape[0]
    p = _hommel_sum(t, b)
    if p > 1 + 1e-12:
        raise InfeasibleConstructionError(f"Hommel bound t*sum (b_i - b_(i-1))/i = {p:.6g} exceeds 1")
    lower = np.concatenate(([0.0], b[:-1]))
    # probability of component i is pi_i * p = t * (b_i - b_{i-1}) / i
    comp_probs = t * (b - lower) / np.arange(1, m + 1)
    cum = np.cumsum(comp_probs)
    comp = np.searchsorted(cum, rng.random(n), side="right")  # == m means "no component"
    top = open_uniform(rng, b[-1], 1.0, n)
    P = np.repeat(top[:, None], t, axis=1)
    for i in range(1, m + 1):
        rows = np.flatnonzero(comp == i - 1)
        if rows.size == 0:
            continue
        ui = open_uniform(rng, lower[i - 1], b[i - 1], rows.size)
        chosen = _random_subset_mask(rng, rows.size, t, i)
        sub = P[rows]
        sub[chosen] = np.repeat(ui, i)
        P[rows] = sub
    return P


def sample_lemma31(t: int, betas: Sequence[float], rng: np.random.Generator) -> list[float]:
    return lemma31_batch(1, t, betas, rng)[0].tolist()
