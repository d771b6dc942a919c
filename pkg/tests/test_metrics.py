import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from suturesim.errors import (
    InsufficientDataError,
    InvalidArgumentError,
    UndefinedMetricError,
)
from suturesim.metrics import (
    analyze_groups,
    anova_from_summary,
    anova_oneway,
    compare_report,
    cov_percent,
    load_fixtures,
    lumen_reduction,
    pin_gauge,
    placement_stats,
    q_critical,
    render_report_markdown,
    tukey_hsd,
)

# Canned datasets with oracle values frozen from scipy.stats
# (f_oneway / tukey_hsd), computed once and pinned here.
D1 = [[1, 2, 3], [2, 3, 4], [10, 11, 12]]
D1_F, D1_P = 73.0, 6.150677941390873e-05
D1_SIG = {(0, 1): False, (0, 2): True, (1, 2): True}

D2 = [[21, 32, 10, 15, 28, 20], [71, 99, 45, 60, 80], [39, 10, 68, 25, 53],
      [26, 43, 9, 30, 22]]
D2_F, D2_P = 9.578960952516788, 0.0006226062014457884
D2_SIG = {(0, 1): True, (0, 2): False, (0, 3): False, (1, 2): True,
          (1, 3): True, (2, 3): False}

D3 = [[5.1, 4.9, 5.3, 5.0], [6.2, 5.8, 6.0, 6.4]]
D3_F, D3_P = 43.85217391304341, 0.0005713464499309927
D3_SIG = {(0, 1): True}


class TestCovPercent:
    def test_zero_spread(self):
        assert cov_percent([5, 5, 5]) == 0.0

    def test_hand_computed(self):
        # sample SD of [1,2,3] is 1, mean is 2
        assert cov_percent([1, 2, 3]) == 50.0

    def test_scale_invariance(self):
        base = [1.2, 3.4, 2.2, 5.0]
        for c in (0.5, 2.0, 17.0):
            assert cov_percent([c * v for v in base]) == pytest.approx(
                cov_percent(base), rel=1e-12
            )

    def test_translation_changes_cov(self):
        base = [1.0, 2.0, 3.0]
        assert cov_percent([v + 10 for v in base]) != pytest.approx(cov_percent(base))

    def test_zero_mean_undefined(self):
        with pytest.raises(UndefinedMetricError):
            cov_percent([-1.0, 1.0])

    def test_single_value_rejected(self):
        with pytest.raises(InsufficientDataError):
            cov_percent([1.0])


class TestLumenReduction:
    def test_identity(self):
        assert lumen_reduction(4.5, 4.5) == 0.0

    def test_hand_evaluated(self):
        assert lumen_reduction(3.5, 4.5) == pytest.approx(39.51, abs=0.01)

    def test_near_total(self):
        assert lumen_reduction(0.1, 4.5) == pytest.approx(99.95, abs=0.01)

    def test_monotone_decreasing_in_anastomosis_id(self):
        values = [lumen_reduction(d, 4.5) for d in (1.0, 2.0, 3.0, 4.0, 4.5)]
        assert values == sorted(values, reverse=True)
        assert values[-1] == 0.0

    def test_oversize_clamped_with_warning(self):
        with pytest.warns(UserWarning):
            assert lumen_reduction(5.0, 4.5) == 0.0

    def test_nonpositive_rejected(self):
        with pytest.raises(InvalidArgumentError):
            lumen_reduction(0.0, 4.5)


class TestPinGauge:
    def test_floor(self):
        assert pin_gauge(3.7) == 3.5

    def test_exact_pin(self):
        assert pin_gauge(4.0) == 4.0

    def test_below_smallest_pin(self):
        with pytest.warns(UserWarning):
            assert pin_gauge(0.3) == 0.0

    def test_idempotent(self):
        for x in (0.7, 1.9, 2.5, 3.74, 4.0):
            assert pin_gauge(pin_gauge(x)) == pin_gauge(x)


class TestPlacementStats:
    def test_even_ring_spacing(self):
        angles = [i * 45.0 for i in range(8)]
        placements = {"right": [(1.5, a) for a in angles]}
        out = placement_stats(placements, diameter_mm=4.5)
        expected = math.pi * 4.5 / 8
        assert out.spacings_mm == pytest.approx([expected] * 8)
        assert out.spacing_cov_percent == pytest.approx(0.0, abs=1e-9)
        assert out.bite_cov_percent == pytest.approx(0.0, abs=1e-9)

    def test_uniform_bites(self):
        placements = {"right": [(1.5, 0.0), (1.5, 90.0), (1.5, 180.0)]}
        out = placement_stats(placements, diameter_mm=4.5)
        assert out.bite_mean_mm == 1.5
        assert out.bite_sd_mm == 0.0

    def test_wraparound_included(self):
        placements = {"left": [(1.0, 350.0), (1.2, 10.0)]}
        out = placement_stats(placements, diameter_mm=4.5)
        # gaps of 20 and 340 degrees
        arcs = sorted(out.spacings_mm)
        assert arcs[0] == pytest.approx(20 * math.pi * 4.5 / 360)
        assert arcs[1] == pytest.approx(340 * math.pi * 4.5 / 360)

    def test_insufficient_placements(self):
        with pytest.raises(InsufficientDataError):
            placement_stats({"right": [(1.5, 0.0)]}, diameter_mm=4.5)


class TestAnova:
    def test_identical_groups(self):
        result = anova_oneway([[3, 3, 3], [3, 3, 3]])
        assert result.f_statistic == 0.0
        assert result.p_value == 1.0

    @pytest.mark.parametrize(
        "groups,f_exp,p_exp",
        [(D1, D1_F, D1_P), (D2, D2_F, D2_P), (D3, D3_F, D3_P)],
    )
    def test_matches_frozen_oracle(self, groups, f_exp, p_exp):
        result = anova_oneway(groups)
        assert result.f_statistic == pytest.approx(f_exp, rel=1e-6)
        assert result.p_value == pytest.approx(p_exp, rel=1e-6)

    def test_matches_live_scipy(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            groups = [rng.normal(rng.uniform(0, 2), 1.0, size=rng.integers(3, 12)).tolist()
                      for _ in range(int(rng.integers(2, 6)))]
            mine = anova_oneway(groups)
            f_ref, p_ref = scipy_stats.f_oneway(*groups)
            assert mine.f_statistic == pytest.approx(float(f_ref), rel=1e-10)
            assert mine.p_value == pytest.approx(float(p_ref), rel=1e-8)

    def test_two_groups_equal_t_squared(self):
        t_stat, _ = scipy_stats.ttest_ind(*D3)
        result = anova_oneway(D3)
        assert result.f_statistic == pytest.approx(float(t_stat) ** 2, rel=1e-10)

    def test_shift_invariance(self):
        base = anova_oneway(D2)
        shifted = anova_oneway([[v + 123.456 for v in g] for g in D2])
        assert shifted.f_statistic == pytest.approx(base.f_statistic, abs=1e-10)

    def test_summary_matches_raw(self):
        means = [float(np.mean(g)) for g in D2]
        sds = [float(np.std(g, ddof=1)) for g in D2]
        ns = [len(g) for g in D2]
        raw = anova_oneway(D2)
        summ = anova_from_summary(means, sds, ns)
        assert summ.f_statistic == pytest.approx(raw.f_statistic, rel=1e-12)

    def test_degenerate_group_size_rejected(self):
        with pytest.raises(InvalidArgumentError):
            anova_oneway([[1.0], [2.0, 3.0]])


class TestTukey:
    def test_identical_groups_no_significance(self):
        result = tukey_hsd([[3, 3, 3.1], [3, 3.1, 3], [3.1, 3, 3]])
        assert not any(any(row) for row in result.significant)

    @pytest.mark.parametrize(
        "groups,expected", [(D1, D1_SIG), (D2, D2_SIG), (D3, D3_SIG)]
    )
    def test_decisions_match_frozen_oracle(self, groups, expected):
        result = tukey_hsd(groups)
        for (i, j), sig in expected.items():
            assert result.significant[i][j] is sig, (i, j)

    def test_symmetry(self):
        result = tukey_hsd(D2)
        k = len(D2)
        for i in range(k):
            for j in range(k):
                assert result.significant[i][j] == result.significant[j][i]
                assert result.q_statistics[i][j] == result.q_statistics[j][i]

    def test_two_groups_agrees_with_anova(self):
        for groups in (D3, [[1.0, 1.1, 0.9], [1.05, 0.95, 1.0]]):
            anova = anova_oneway(groups)
            tukey = tukey_hsd(groups)
            assert tukey.significant[0][1] == (anova.p_value < 0.05)

    def test_df_below_table_warns(self):
        with pytest.warns(UserWarning):
            q_critical(2, 4)

    def test_q_interp_monotone_in_df(self):
        values = [q_critical(3, df) for df in (5, 9, 17, 33, 77, 119, 500, 10**6)]
        assert values == sorted(values, reverse=True)
        assert values[-1] == pytest.approx(3.31, abs=0.01)

    def test_analyze_groups_skips_posthoc_when_ns(self):
        result = analyze_groups([[1.0, 2.0, 3.0], [1.1, 2.1, 2.9]])
        assert result.tukey is None


class TestCompareReport:
    def _simulated(self):
        return {
            "bite_cov_percent": {"value": 32, "n": 80},
            "spacing_cov_percent": {"value": 29, "n": 80},
            "lumen_reduction_percent": {"mean": 27.0, "sd": 15.0, "n": 5},
            "bubble_leak_psi": None,
            "time_per_stitch_s": {"mean": 360.0, "sd": 30.0, "n": 5},
            "raw": {},
        }

    def test_fixture_rows_present(self):
        report = compare_report(self._simulated(), load_fixtures())
        names = [row["name"] for row in report["rows"]]
        assert names == ["surgeon_1", "surgeon_2", "surgeon_3", "robot", "simulated"]
        robot = next(r for r in report["rows"] if r["name"] == "robot")
        assert robot["time_per_stitch_s"] == {"mean": 353, "sd": 40, "n": 5}
        md = render_report_markdown(report)
        assert "353" in md and "simulated" in md

    def test_zero_variance_flagged(self):
        sim = self._simulated()
        sim["bite_cov_percent"] = {"value": 0, "n": 80}
        report = compare_report(sim, load_fixtures())
        assert report["degenerate_zero_variance"] is True

    def test_empty_fixtures_omitted(self):
        report = compare_report(self._simulated(), None)
        assert report["fixtures_present"] is False
        assert [row["name"] for row in report["rows"]] == ["simulated"]

    def test_comparisons_flagged_summary_only(self):
        report = compare_report(self._simulated(), load_fixtures())
        assert report["comparisons"]["time_per_stitch_s"]["summary_stats_only"] is True
        assert "simulated" in report["comparisons"]["time_per_stitch_s"]["groups"]
