import json
import math
import random
import statistics

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hctree.errors import (
    BadBeta,
    EmptyGold,
    EvalError,
    OutOfRange,
    QuerySetMismatch,
    TooFewSamples,
    ZeroVariance,
)
from hctree.evalkit import (
    QueryJudgment,
    cohens_d,
    compare_methods,
    f_beta,
    paired_t,
    precision_recall,
    read_judgments,
    t_sf,
    total_score,
)

unit_interval = st.floats(0.0, 1.0)


def t_tail_by_quadrature(t, df):
    # independent oracle: integrate the Student t density directly
    mpmath.mp.dps = 30
    c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
    dens = lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2)
    return float(mpmath.quad(dens, [t, mpmath.inf]))


class TestPrecisionRecall:
    def test_equal(self):
        assert precision_recall({1, 2}, {1, 2}) == (1.0, 1.0)

    def test_superset(self):
        assert precision_recall({1, 2, 3, 4}, {1, 2}) == (0.5, 1.0)

    def test_empty_retrieved(self):
        assert precision_recall(set(), {1}) == (0.0, 0.0)

    def test_empty_gold(self):
        with pytest.raises(EmptyGold):
            precision_recall({1}, set())


class TestFBeta:
    def test_perfect(self):
        assert f_beta(1, 1) == 1.0

    def test_recall_weighted(self):
        assert abs(f_beta(0.5, 1.0, 4) - 8.5 / 9) <= 1e-12

    def test_zero(self):
        assert f_beta(0, 0) == 0.0

    @pytest.mark.parametrize("beta", [0, -1, float("inf"), float("nan")])
    def test_bad_beta(self, beta):
        with pytest.raises(BadBeta):
            f_beta(0.5, 0.5, beta)

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            f_beta(1.5, 0.5)

    @settings(max_examples=500)
    @given(unit_interval, unit_interval)
    def test_harmonic_mean(self, p, r):
        want = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        assert abs(f_beta(p, r, 1) - want) <= 1e-12

    @settings(max_examples=500)
    @given(unit_interval, unit_interval, st.floats(0.01, 50))
    def test_between_p_and_r(self, p, r, beta):
        f = f_beta(p, r, beta)
        assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12

    @settings(max_examples=500)
    @given(unit_interval, unit_interval, unit_interval, st.floats(0.01, 50))
    def test_monotone(self, p, r, other, beta):
        lo, hi = sorted((p, other))
        assert f_beta(lo, r, beta) <= f_beta(hi, r, beta) + 1e-12
        assert f_beta(r, lo, beta) <= f_beta(r, hi, beta) + 1e-12


class TestTotal:
    @pytest.mark.parametrize("e,f,want", [(5, 1, 5.0), (4, 0.8, 4.0), (1, 0, 0.5)])
    def test_examples(self, e, f, want):
        assert total_score(e, f) == want

    @given(st.floats(1, 5), unit_interval)
    def test_affine(self, e, f):
        assert total_score(e, f) == 0.5 * e + 2.5 * f

    @pytest.mark.parametrize("e,f", [(0.5, 0.5), (5.5, 0.5), (3, 1.1), (3, -0.1)])
    def test_out_of_range(self, e, f):
        with pytest.raises(OutOfRange):
            total_score(e, f)


class TestStatistics:
    def test_paired_t_example(self):
        mean, t, p = paired_t([1, 2, 3])
        assert mean == 2.0 and abs(t - 2 * math.sqrt(3)) <= 1e-9
        assert abs(p - t_tail_by_quadrature(t, 2)) <= 1e-9

    def test_t_zero(self):
        for df in (1, 2, 5, 30, 1000):
            assert abs(t_sf(0.0, df) - 0.5) <= 1e-9

    @pytest.mark.parametrize("t,df", [(0.3, 1), (-1.2, 3), (2.5, 7), (4.0, 29), (-0.01, 100)])
    def test_tail_against_quadrature(self, t, df):
        assert abs(t_sf(t, df) - t_tail_by_quadrature(t, df)) <= 1e-10

    def test_p_in_open_interval(self):
        rng = random.Random(4)
        for _ in range(50):
            diffs = [rng.gauss(0.2, 1) for _ in range(rng.randint(2, 40))]
            assert 0 < paired_t(diffs)[2] < 1

    def test_constant(self):
        with pytest.raises(ZeroVariance):
            paired_t([0.5, 0.5, 0.5])
        with pytest.raises(ZeroVariance):
            cohens_d([2, 2])

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            paired_t([1.0])

    def test_cohens_d(self):
        assert abs(cohens_d([1, 2, 3]) - 2.0) <= 1e-12
        assert cohens_d([-1, 0, 1]) == 0.0


def run(scores, retrieved=None):
    return [QueryJudgment(f"q{i:02d}", {1, 2}, retrieved or {1, 2}, s) for i, s in enumerate(scores)]


class TestCompare:
    def test_identical_runs(self):
        rep = compare_methods({"origin": run([3, 4, 5]), "tree": run([3, 4, 5])}, "origin")
        total = rep.comparisons[0]
        assert total.label == "tree vs origin (Total Score)"
        assert total.mean_difference == 0 and total.note == "zero variance" and total.t is None

    def test_constant_shift(self):
        rep = compare_methods({"origin": run([3, 4, 4]), "tree": run([3.5, 4.5, 4.5])}, "origin")
        assert [c.metric for c in rep.comparisons] == ["total", "expert"]
        total, expert = rep.comparisons
        assert expert.mean_difference == pytest.approx(0.5)
        assert total.mean_difference == pytest.approx(0.25)  # Total weighs expert by 0.5
        assert total.note == expert.note == "zero variance"

    def test_mismatched_queries(self):
        with pytest.raises(QuerySetMismatch):
            compare_methods({"origin": run([3, 4]), "tree": run([3, 4, 5])}, "origin")

    def test_unknown_baseline(self):
        with pytest.raises(EvalError):
            compare_methods({"tree": run([3, 4])}, "origin")

    def test_missing_expert(self):
        rep = compare_methods({"origin": run([None, None]), "tree": run([None, None])}, "origin")
        assert all(c.note == "missing expert scores" for c in rep.comparisons)
        assert rep.means["origin"]["total"] is None
        json.loads(rep.to_json())

    def test_expert_range(self):
        with pytest.raises(OutOfRange):
            QueryJudgment("q", {1}, {1}, 6)

    def test_against_independent_recomputation(self):
        rng = random.Random(30)
        gold = [set(rng.sample(range(1, 50), rng.randint(1, 5))) for _ in range(30)]
        runs, raw = {}, {}
        for method in ("origin", "tree", "tree+qe"):
            judgments, rows = [], []
            for i, g in enumerate(gold):
                retrieved = set(rng.sample(range(1, 50), rng.randint(0, 8))) | set(list(g)[: rng.randint(0, len(g))])
                expert = rng.choice([1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5])
                judgments.append(QueryJudgment(f"q{i}", g, retrieved, expert))
                hit = len(retrieved & g)
                p = hit / len(retrieved) if retrieved else 0.0
                r = hit / len(g)
                f = 0.0 if p == r == 0 else 17 * p * r / (16 * p + r)
                rows.append((expert, 0.5 * expert + 2.5 * f))
            runs[method], raw[method] = judgments, rows
        rep = compare_methods(runs, "origin")
        for c in rep.comparisons:
            col = 1 if c.metric == "total" else 0
            diffs = [m[col] - b[col] for m, b in zip(raw[c.method], raw["origin"])]
            mean, sd = statistics.mean(diffs), statistics.stdev(diffs)
            t = mean / (sd / math.sqrt(len(diffs)))
            assert c.mean_difference == pytest.approx(mean, abs=1e-12)
            assert c.t == pytest.approx(t, abs=1e-9)
            assert c.cohens_d == pytest.approx(mean / sd, abs=1e-12)
            assert c.p_one_tailed == pytest.approx(t_tail_by_quadrature(t, 29), abs=1e-9)
        assert rep.means["tree"]["total"] == pytest.approx(statistics.mean(r[1] for r in raw["tree"]))
        assert len(rep.differences) == 4 * 30
        table = rep.render_table()
        assert "tree+qe vs origin (Expert Score)" in table and "Cohen's d" in table
        assert rep.differences_csv().startswith("comparison,metric,query_id,")


def test_read_judgments(tmp_path):
    p = tmp_path / "j.jsonl"
    p.write_text('{"method": "origin", "query_id": "a", "gold": [1], "retrieved": [1, 2], "expert": 4}\n'
                 '\n{"method": "tree", "query_id": "a", "gold": [1], "retrieved": [], "expert": null}\n')
    runs = read_judgments(p)
    assert runs["origin"][0].retrieved_chunk_ids == {1, 2}
    assert runs["tree"][0].expert_score is None
    p.write_text('{"method": "x"}\n')
    with pytest.raises(EvalError):
        read_judgments(p)
