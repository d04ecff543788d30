import math
from fractions import Fraction
from itertools import permutations, product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genfwer import (
    DimensionError,
    ParameterError,
    ProcedureSpec,
    PValueVector,
    RejectionSet,
    UnsupportedMethodError,
    adjusted_pvalues,
    apply_procedure,
    automatic_k_minus_1_option,
    bh_thresholds,
    constants_fdp_hommel,
    constants_fdp_stepdown,
    constants_holm,
    constants_kfwer_stepdown,
    custom_constants,
    harmonic,
    make_constants,
    order_pvalues,
    singlestep_kfwer,
    stepdown,
    stepdown_batch,
    stepup_batch,
    stepup_bh,
)


# ---------------------------------------------------------------- oracles


def brute_stepdown(p, alphas):
    """Largest r such that the r smallest p-values all clear their constants."""
    srt = sorted(p)
    for r in range(len(p), 0, -1):
        if all(srt[j] <= alphas[j] for j in range(r)):
            return r
    return 0


def brute_stepup(p, thresholds):
    srt = sorted(p)
    for r in range(len(p), 0, -1):
        if srt[r - 1] <= thresholds[r - 1]:
            return r
    return 0


def exact_kfwer(s, k, alpha):
    a = Fraction(alpha)
    return [float(k * a / s) if i <= k else float(k * a / (s + k - i)) for i in range(1, s + 1)]


def exact_fdp(s, gamma, alpha):
    out = []
    for i in range(1, s + 1):
        f = math.floor(gamma * i)  # Fraction floor is exact
        out.append(float((f + 1) * alpha / (s + f + 1 - i)))
    return out


# ---------------------------------------------------------------- constants


def test_holm_examples():
    assert constants_holm(4, 0.05).alphas.tolist() == [0.0125, 0.05 / 3, 0.025, 0.05]
    assert constants_holm(1, 0.05).alphas.tolist() == [0.05]


def test_kfwer_example_exact():
    assert constants_kfwer_stepdown(5, 2, 0.05).alphas.tolist() == [0.02, 0.02, 0.025, 1 / 30, 0.05]


@pytest.mark.parametrize("s", [1, 2, 7, 50, 200])
@pytest.mark.parametrize("k", [1, 2, 5])
def test_kfwer_matches_exact_rational(s, k):
    if k > s:
        return
    got = constants_kfwer_stepdown(s, k, "0.05").alphas.tolist()
    assert got == exact_kfwer(s, k, Fraction(1, 20))
    assert got[-1] == 0.05


def test_k1_is_holm_for_all_s():
    for s in range(1, 201):
        assert np.array_equal(constants_kfwer_stepdown(s, 1, 0.05).alphas, constants_holm(s, 0.05).alphas)


def test_fdp_example_jump():
    c = constants_fdp_stepdown(100, "1/10", 0.05).alphas
    assert c[8] == pytest.approx(0.00054348, abs=5e-9)
    assert c[9] == pytest.approx(0.00108696, abs=5e-9)
    assert c[8] == 0.05 / 92
    assert c[9] == 0.1 / 92


def test_fdp_small_gamma_is_holm():
    for s in range(1, 120):
        g = Fraction(1, s + 1)
        assert np.array_equal(constants_fdp_stepdown(s, g, 0.05).alphas, constants_holm(s, 0.05).alphas)


def test_gamma_floor_is_exact():
    # 0.29 * 100 is 28.999999999999996 in binary floating point
    assert math.floor(0.29 * 100) == 28
    c = constants_fdp_stepdown(100, "0.29", 0.05).alphas
    assert c[99] == float(30 * Fraction(1, 20) / 30)
    assert c.tolist() == exact_fdp(100, Fraction(29, 100), Fraction(1, 20))


@settings(max_examples=200)
@given(st.integers(1, 300), st.fractions(Fraction(1, 1000), Fraction(999, 1000)),
       st.sampled_from(["0.01", "0.05", "0.1", "0.25"]))
def test_fdp_constants_monotone_and_exact(s, gamma, alpha):
    c = constants_fdp_stepdown(s, gamma, alpha).alphas
    assert np.all(np.diff(c) >= 0)
    assert np.all((c >= 0) & (c <= 1))
    assert c.tolist() == exact_fdp(s, gamma, Fraction(alpha))


def test_harmonic():
    assert harmonic(1) == 1
    assert harmonic(2) == Fraction(3, 2)
    assert harmonic(5) == Fraction(137, 60)
    for j in (1, 17, 60):
        assert harmonic(j) == sum(Fraction(1, i) for i in range(1, j + 1))
    with pytest.raises(ParameterError):
        harmonic(0)


@pytest.mark.parametrize("s", [10, 11, 50, 100, 1000, 5000])
def test_harmonic_log_approximation(s):
    assert abs(float(harmonic(s)) - (math.log(s + 0.5) + 0.5772156649)) < 0.01


def test_hommel_constants():
    assert float(harmonic(11)) == pytest.approx(3.019877, abs=1e-6)
    base = constants_fdp_stepdown(100, "0.1", 0.05).alphas
    h = constants_fdp_hommel(100, "0.1", 0.05).alphas
    np.testing.assert_allclose(h, base / float(harmonic(11)), rtol=1e-15)
    assert np.all(h <= base)
    assert np.array_equal(constants_fdp_hommel(50, "0.01", 0.05).alphas,
                          constants_fdp_stepdown(50, "0.01", 0.05).alphas)


def test_hommel_large_s_float_path():
    s = 5000
    h = constants_fdp_hommel(s, "0.1", 0.05).alphas
    base = constants_fdp_stepdown(s, "0.1", 0.05).alphas
    j = s // 10 + 1
    np.testing.assert_allclose(h * math.fsum(1 / i for i in range(1, j + 1)), base, rtol=1e-13)


@pytest.mark.parametrize(
    "call",
    [
        lambda: constants_holm(0, 0.05),
        lambda: constants_holm(5, 1.0),
        lambda: constants_holm(5, 0),
        lambda: constants_kfwer_stepdown(5, 6, 0.05),
        lambda: constants_kfwer_stepdown(5, 0, 0.05),
        lambda: constants_fdp_stepdown(5, 1, 0.05),
        lambda: constants_fdp_stepdown(5, "x", 0.05),
        lambda: custom_constants([0.2, 0.1]),
        lambda: make_constants("bogus", 3, 0.05),
        lambda: make_constants("kfwer-sd", 3, 0.05),
    ],
)
def test_parameter_errors(call):
    with pytest.raises(ParameterError):
        call()


def test_bh_has_no_stepdown_constants():
    with pytest.raises(UnsupportedMethodError):
        make_constants("bh", 3, 0.05)


# ---------------------------------------------------------------- engines


def test_stepdown_holm_example():
    pv = PValueVector.from_values([0.001, 0.012, 0.021, 0.2], ids="abcd")
    assert stepdown(order_pvalues(pv), constants_holm(4, 0.05)).rejected == {"a", "b", "c"}


def test_stepdown_base_case():
    c = custom_constants([0.01, 0.02, 0.05])
    assert stepdown(order_pvalues(PValueVector.from_values([0.011, 0.015, 0.02])), c).count == 0
    assert stepdown(order_pvalues(PValueVector.from_values([0.02, 0.001, 0.5])), c).count == 2


def test_stepdown_dimension():
    with pytest.raises(DimensionError):
        stepdown(order_pvalues(PValueVector.from_values([0.1, 0.2])), constants_holm(3, 0.05))


def test_stepdown_matches_brute_force_on_grid():
    grid = [0.0, 0.004, 0.01, 0.0125, 0.02, 0.04, 0.05, 0.3, 1.0]
    for s in range(1, 13):
        for method, kw in [("holm", {}), ("kfwer-sd", {"k": min(2, s)}), ("fdp-sd", {"gamma": "0.2"}),
                           ("fdp-hommel", {"gamma": "0.3"})]:
            c = make_constants(method, s, 0.05, **kw)
            gen = np.random.default_rng(s)
            for _ in range(60):
                p = gen.choice(grid, size=s).tolist()
                ord_ = order_pvalues(PValueVector.from_values(p))
                assert stepdown(ord_, c).count == brute_stepdown(p, c.alphas.tolist())


@settings(max_examples=300)
@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=40), st.integers(1, 5))
def test_stepdown_random_vs_brute(p, k):
    k = min(k, len(p))
    c = constants_kfwer_stepdown(len(p), k, 0.1)
    ord_ = order_pvalues(PValueVector.from_values(p))
    rej = stepdown(ord_, c)
    assert rej.count == brute_stepdown(p, c.alphas.tolist())
    batch = stepdown_batch(np.array([p]), c.alphas)[0]
    assert set(np.array(ord_.source.ids)[batch]) == rej.rejected


def test_tie_groups_rejected_together():
    p = [0.01, 0.01, 0.01, 0.2]
    ord_ = order_pvalues(PValueVector.from_values(p))
    rej = stepdown(ord_, constants_holm(4, 0.05))
    assert rej.count in (0, 3)


def test_tie_order_invariance():
    vals = [0.001, 0.004, 0.004, 0.004, 0.01, 0.01, 0.3]
    c = constants_kfwer_stepdown(7, 2, 0.05)
    ids = [f"h{j}" for j in range(7)]
    reference = stepdown(order_pvalues(PValueVector.from_values(vals, ids)), c).rejected
    for perm in permutations(range(7)):
        pv = PValueVector.from_values([vals[j] for j in perm], [ids[j] for j in perm])
        assert stepdown(order_pvalues(pv), c).rejected == reference


@settings(max_examples=300)
@given(st.lists(st.floats(0, 0.1), min_size=2, max_size=20), st.data())
def test_lowering_a_pvalue_never_shrinks_rejections(p, data):
    j = data.draw(st.integers(0, len(p) - 1))
    new = data.draw(st.floats(0, p[j]))
    c = constants_fdp_stepdown(len(p), "0.1", 0.1)
    before = stepdown(order_pvalues(PValueVector.from_values(p)), c).rejected
    q = list(p)
    q[j] = new
    after = stepdown(order_pvalues(PValueVector.from_values(q)), c).rejected
    assert before <= after


def test_singlestep():
    p = [0.009, 0.01, 0.011, 0.5, 0.0] + [0.9] * 5
    pv = PValueVector.from_values(p)
    assert singlestep_kfwer(pv, 2, 0.05).rejected == {"H1", "H2", "H5"}
    assert singlestep_kfwer(pv, 1, 0.05).rejected == {"H5"}
    assert singlestep_kfwer(pv, 10, 0.05).count == 4  # threshold alpha
    with pytest.raises(ParameterError):
        singlestep_kfwer(pv, 11, 0.05)


def test_bh_examples():
    ord1 = order_pvalues(PValueVector.from_values([0.04]))
    assert stepup_bh(ord1, 0.05).count == 1
    assert stepup_bh(order_pvalues(PValueVector.from_values([0.06])), 0.05).count == 0
    ord3 = order_pvalues(PValueVector.from_values([0.01, 0.02, 0.9]))
    np.testing.assert_allclose(bh_thresholds(3, 0.05), [0.05 / 3, 0.1 / 3, 0.05])
    assert stepup_bh(ord3, 0.05).rejected == {"H1", "H2"}


@settings(max_examples=300)
@given(st.lists(st.floats(0, 0.3), min_size=1, max_size=30), st.booleans())
def test_bh_random_vs_brute(p, corrected):
    t = bh_thresholds(len(p), 0.1, corrected)
    ord_ = order_pvalues(PValueVector.from_values(p))
    rej = stepup_bh(ord_, 0.1, corrected)
    assert rej.count == brute_stepup(p, t.tolist())
    batch = stepup_batch(np.array([p]), t)[0]
    assert set(np.array(ord_.source.ids)[batch]) == rej.rejected


def test_bh_harmonic_thresholds():
    np.testing.assert_allclose(bh_thresholds(4, 0.05, True),
                               bh_thresholds(4, 0.05) / float(harmonic(4)), rtol=1e-15)


# ---------------------------------------------------------------- adjusted p-values


def test_adjusted_holm_single():
    rep = adjusted_pvalues(order_pvalues(PValueVector.from_values([0.03])), "holm", 0.05)
    assert rep.rows[0].adjusted_p == 0.03


METHOD_PARAMS = [
    ("bonferroni", {}),
    ("holm", {}),
    ("kfwer-ss", {"k": 2}),
    ("kfwer-sd", {"k": 3}),
    ("fdp-sd", {"gamma": "0.1"}),
    ("fdp-hommel", {"gamma": "0.2"}),
    ("bh", {}),
]


@pytest.mark.parametrize("method,kw", METHOD_PARAMS)
def test_adjusted_duality(method, kw):
    gen = np.random.default_rng(hash(method) % 2**32)
    for _ in range(1000):
        s = int(gen.integers(3, 30))
        p = gen.random(s) ** 3
        alpha = float(gen.uniform(0.001, 0.5))
        ord_ = order_pvalues(PValueVector.from_values(p))
        rep = adjusted_pvalues(ord_, method, alpha, **kw)
        spec = ProcedureSpec(method, alpha, **kw)
        expected = spec.reject(ord_).rejected
        flagged = {r.id for r in rep.rows if r.adjusted_p <= alpha}
        assert flagged == expected == rep.rejected.rejected
        by_rank = sorted(rep.rows, key=lambda r: r.rank)
        adj = [r.adjusted_p for r in by_rank]
        assert all(a <= b for a, b in zip(adj, adj[1:]))
        assert all(0 <= a <= 1 for a in adj)


@pytest.mark.parametrize("method,kw", METHOD_PARAMS)
def test_adjusted_duality_over_alpha_grid(method, kw):
    p = [0.0001, 0.0004, 0.002, 0.002, 0.009, 0.03, 0.04, 0.2, 0.6, 0.61]
    ord_ = order_pvalues(PValueVector.from_values(p))
    adj = {r.id: r.adjusted_p for r in adjusted_pvalues(ord_, method, 0.05, **kw).rows}
    for alpha in np.linspace(0.001, 0.999, 97):
        expected = ProcedureSpec(method, float(alpha), **kw).reject(ord_).rejected
        assert {i for i, a in adj.items() if a <= alpha} == expected


@pytest.mark.parametrize("method,kw", METHOD_PARAMS)
def test_tied_adjusted_equal(method, kw):
    ord_ = order_pvalues(PValueVector.from_values([0.01, 0.003, 0.01, 0.01, 0.5]))
    rows = adjusted_pvalues(ord_, method, 0.05, **kw).rows
    tied = {r.adjusted_p for r in rows if r.p == 0.01}
    assert len(tied) == 1


def test_adjusted_report_input_order_and_thresholds():
    pv = PValueVector.from_values([0.2, 0.001, 0.021, 0.012], ids="dabc")
    rep = apply_procedure(pv, ProcedureSpec("holm", 0.05))
    assert [r.id for r in rep.rows] == list("dabc")
    assert [r.rank for r in rep.rows] == [4, 1, 3, 2]
    assert [r.rejected for r in rep.rows] == [False, True, True, True]
    assert rep.rows[1].threshold == 0.0125
    assert rep.n_rejected == 3


def test_custom_constants_have_no_adjustment():
    with pytest.raises(ParameterError):
        adjusted_pvalues(order_pvalues(PValueVector.from_values([0.1])), "custom", 0.05)


# ---------------------------------------------------------------- k-1 option


def test_k_minus_1_option():
    ord_ = order_pvalues(PValueVector.from_values([0.3, 0.2, 0.9, 0.1], ids="abcd"))
    empty = RejectionSet(())
    assert automatic_k_minus_1_option(empty, ord_, 1) == empty
    assert automatic_k_minus_1_option(empty, ord_, 3).rejected == {"d", "b"}
    assert automatic_k_minus_1_option(empty, ord_, 3, enabled=False) == empty


def test_procedure_spec_k_minus_1_batch_matches_single():
    spec = ProcedureSpec("kfwer-sd", 0.05, k=3, reject_k_minus_1=True)
    gen = np.random.default_rng(1)
    P = gen.random((50, 8))
    mask = spec.reject_batch(P)
    for row, m in zip(P, mask):
        ord_ = order_pvalues(PValueVector.from_values(row))
        assert set(np.array(ord_.source.ids)[m]) == spec.reject(ord_).rejected


def test_procedure_spec_validation():
    with pytest.raises(ParameterError):
        ProcedureSpec("holm", 0.05, k=2)
    with pytest.raises(ParameterError):
        ProcedureSpec("fdp-sd", 0.05)
    with pytest.raises(ParameterError):
        ProcedureSpec("holm", 0.05, harmonic_correction=True)
    with pytest.raises(ParameterError):
        ProcedureSpec("holm", 0.05, reject_k_minus_1=True)


def test_grid_exhaustive_small():
    grid = [0.0, 0.01, 0.02, 0.03, 0.06]
    c = constants_kfwer_stepdown(4, 2, 0.1)
    for p in product(grid, repeat=4):
        ord_ = order_pvalues(PValueVector.from_values(list(p)))
        assert stepdown(ord_, c).count == brute_stepdown(list(p), c.alphas.tolist())
