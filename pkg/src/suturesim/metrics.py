"""Outcome statistics for anastomosis runs.

Placement consistency (COV%), lumen reduction with pin-gauge quantization,
bite/spacing extraction from suture placements, one-way ANOVA with a Tukey
HSD post-hoc on an embedded studentized-range table, and comparison
reports against the embedded ex vivo reference fixtures.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .errors import InsufficientDataError, InvalidArgumentError, UndefinedMetricError


def cov_percent(values: Sequence[float]) -> float:
    """Coefficient of variation: 100 * sample SD (n-1) / mean."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise InsufficientDataError("COV%% needs at least two values")
    mean = float(np.mean(x))
    if mean == 0.0:
        raise UndefinedMetricError("COV%% undefined for zero-mean values")
    return 100.0 * float(np.std(x, ddof=1)) / mean


def lumen_reduction(anastomosis_id_mm: float, raw_id_mm: float) -> float:
    """Percent loss of lumen cross-sectional area at the anastomosis."""
    if anastomosis_id_mm <= 0 or raw_id_mm <= 0:
        raise InvalidArgumentError("diameters must be > 0")
    if anastomosis_id_mm > raw_id_mm:
        warnings.warn(
            "anastomosis ID exceeds raw vessel ID; clamping reduction to 0%",
            stacklevel=2,
        )
        return 0.0
    return 100.0 * (1.0 - (anastomosis_id_mm / raw_id_mm) ** 2)


def pin_gauge(true_id_mm: float, increment_mm: float = 0.5) -> float:
    """Largest pin diameter (in increment_mm steps) that fits the lumen."""
    if true_id_mm < 0:
        raise InvalidArgumentError("inner diameter must be >= 0")
    measured = math.floor(true_id_mm / increment_mm + 1e-9) * increment_mm
    if measured <= 0:
        warnings.warn("lumen below the smallest pin; reporting 0.0 mm", stacklevel=2)
        return 0.0
    return measured


@dataclass(frozen=True)
class PlacementStats:
    bite_depths_mm: tuple
    spacings_mm: tuple
    bite_mean_mm: float
    bite_sd_mm: float
    bite_cov_percent: float
    spacing_mean_mm: float
    spacing_cov_percent: float


def _side_spacings_mm(angles_deg: Sequence[float], diameter_mm: float) -> list[float]:
    angles = sorted(float(a) % 360.0 for a in angles_deg)
    gaps = [b - a for a, b in zip(angles, angles[1:])]
    gaps.append(360.0 - angles[-1] + angles[0])
    return [g * math.pi * diameter_mm / 360.0 for g in gaps]


def placement_stats(
    placements_by_side: Mapping[str, Sequence[tuple]],
    diameter_mm: float,
) -> PlacementStats:
    """Bite depths, arc spacings (wraparound pair included), and COV%s.

    placements_by_side maps a side name to (bite_depth_mm,
    angular_position_deg) pairs; spacings are computed per side around the
    circumference and pooled.
    """
    bites: list[float] = []
    spacings: list[float] = []
    for side, placements in placements_by_side.items():
        if len(placements) < 2:
            raise InsufficientDataError(
                f"side {side!r} has {len(placements)} placements; need >= 2"
            )
        bites.extend(float(b) for b, _ in placements)
        spacings.extend(_side_spacings_mm([a for _, a in placements], diameter_mm))
    bites_arr = np.asarray(bites)
    return PlacementStats(
        bite_depths_mm=tuple(bites),
        spacings_mm=tuple(spacings),
        bite_mean_mm=float(np.mean(bites_arr)),
        bite_sd_mm=float(np.std(bites_arr, ddof=1)),
        bite_cov_percent=cov_percent(bites),
        spacing_mean_mm=float(np.mean(spacings)),
        spacing_cov_percent=cov_percent(spacings),
    )


@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    df_between: int
    df_within: int
    p_value: float


@dataclass(frozen=True)
class TukeyResult:
    group_means: tuple
    q_statistics: tuple  # symmetric k x k nested tuples
    significant: tuple  # symmetric k x k nested tuples of bool
    q_critical: float
    alpha: float

    def pair(self, i: int, j: int) -> tuple[float, bool]:
        return self.q_statistics[i][j], self.significant[i][j]


@dataclass(frozen=True)
class StatResult:
    anova: AnovaResult
    tukey: TukeyResult | None


def _group_summaries(groups: Sequence[Sequence[float]]):
    ns = [len(g) for g in groups]
    if len(groups) < 2:
        raise InvalidArgumentError("need at least two groups")
    if any(n < 2 for n in ns):
        raise InvalidArgumentError("every group needs at least two observations")
    means = [float(np.mean(np.asarray(g, dtype=float))) for g in groups]
    variances = [float(np.var(np.asarray(g, dtype=float), ddof=1)) for g in groups]
    return means, variances, ns


def _anova_from_moments(means, variances, ns) -> AnovaResult:
    k = len(means)
    if k < 2:
        raise InvalidArgumentError("ANOVA needs at least two groups")
    if any(n < 2 for n in ns):
        raise InvalidArgumentError("every group needs at least two observations")
    n_total = sum(ns)
    grand = sum(n * m for n, m in zip(ns, means)) / n_total
    ss_between = sum(n * (m - grand) ** 2 for n, m in zip(ns, means))
    ss_within = sum((n - 1) * v for n, v in zip(ns, variances))
    df_between = k - 1
    df_within = n_total - k
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    if ms_within == 0.0:
        if ms_between == 0.0:
            return AnovaResult(0.0, df_between, df_within, 1.0)
        return AnovaResult(float("inf"), df_between, df_within, 0.0)
    f = ms_between / ms_within
    # upper tail of F(df_between, df_within) via the regularized
    # incomplete beta function
    p = float(betainc(df_within / 2.0, df_between / 2.0,
                      df_within / (df_within + df_between * f)))
    return AnovaResult(float(f), df_between, df_within, min(max(p, 0.0), 1.0))


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way ANOVA: between/within decomposition, F upper-tail p-value."""
    means, variances, ns = _group_summaries(groups)
    return _anova_from_moments(means, variances, ns)


def anova_from_summary(means, sds, ns) -> AnovaResult:
    """ANOVA recovered from per-group mean, SD, and n (no raw data)."""
    return _anova_from_moments(
        [float(m) for m in means], [float(s) ** 2 for s in sds], [int(n) for n in ns]
    )


# Critical values of the studentized range q(alpha=0.05, k, df) from the
# standard table; rows are df, columns are k = 2..6. The last row is the
# df -> infinity limit.
_Q_TABLE_DF = (5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20,
               24, 30, 40, 60, 120, math.inf)
_Q_TABLE_K = (2, 3, 4, 5, 6)
_Q_TABLE_05 = (
    (3.64, 4.60, 5.22, 5.67, 6.03),
    (3.46, 4.34, 4.90, 5.30, 5.63),
    (3.34, 4.16, 4.68, 5.06, 5.36),
    (3.26, 4.04, 4.53, 4.89, 5.17),
    (3.20, 3.95, 4.41, 4.76, 5.02),
    (3.15, 3.88, 4.33, 4.65, 4.91),
    (3.11, 3.82, 4.26, 4.57, 4.82),
    (3.08, 3.77, 4.20, 4.51, 4.75),
    (3.06, 3.73, 4.15, 4.45, 4.69),
    (3.03, 3.70, 4.11, 4.41, 4.64),
    (3.01, 3.67, 4.08, 4.37, 4.59),
    (3.00, 3.65, 4.05, 4.33, 4.56),
    (2.98, 3.63, 4.02, 4.30, 4.52),
    (2.97, 3.61, 4.00, 4.28, 4.49),
    (2.96, 3.59, 3.98, 4.25, 4.47),
    (2.95, 3.58, 3.96, 4.23, 4.45),
    (2.92, 3.53, 3.90, 4.17, 4.37),
    (2.89, 3.49, 3.85, 4.10, 4.30),
    (2.86, 3.44, 3.79, 4.04, 4.23),
    (2.83, 3.40, 3.74, 3.98, 4.16),
    (2.80, 3.36, 3.68, 3.92, 4.10),
    (2.77, 3.31, 3.63, 3.86, 4.03),
)


def q_critical(k: int, df: int, alpha: float = 0.05) -> float:
    """Tabulated studentized-range critical value, interpolated in df.

    Linear interpolation between tabulated df rows (1/df interpolation for
    df beyond 120); df below the table raises an extrapolation warning and
    uses the nearest entry.
    """
    if alpha != 0.05:
        raise InvalidArgumentError("only alpha = 0.05 is tabulated")
    if not (2 <= k <= _Q_TABLE_K[-1]):
        raise InvalidArgumentError(f"k = {k} outside tabulated range 2..{_Q_TABLE_K[-1]}")
    col = _Q_TABLE_K.index(k)
    if df < _Q_TABLE_DF[0]:
        warnings.warn(
            f"df = {df} below tabulated range; using nearest entry (df = 5)",
            stacklevel=2,
        )
        return _Q_TABLE_05[0][col]
    if df >= _Q_TABLE_DF[-2]:  # beyond df = 120: interpolate in 1/df to the limit
        q120 = _Q_TABLE_05[-2][col]
        qinf = _Q_TABLE_05[-1][col]
        t = (1.0 / 120.0 - 1.0 / df) / (1.0 / 120.0) if math.isfinite(df) else 1.0
        return q120 + t * (qinf - q120)
    idx = 0
    while _Q_TABLE_DF[idx + 1] <= df:
        idx += 1
    lo_df, hi_df = _Q_TABLE_DF[idx], _Q_TABLE_DF[idx + 1]
    lo_q, hi_q = _Q_TABLE_05[idx][col], _Q_TABLE_05[idx + 1][col]
    t = (df - lo_df) / (hi_df - lo_df)
    return lo_q + t * (hi_q - lo_q)


def _tukey_from_moments(means, variances, ns, alpha) -> TukeyResult:
    anova = _anova_from_moments(means, variances, ns)
    k = len(means)
    df_within = anova.df_within
    ms_within = sum((n - 1) * v for n, v in zip(ns, variances)) / df_within
    q_crit = q_critical(k, df_within, alpha)
    q_stats = [[0.0] * k for _ in range(k)]
    sig = [[False] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            se = math.sqrt(ms_within / 2.0 * (1.0 / ns[i] + 1.0 / ns[j]))
            q = abs(means[i] - means[j]) / se if se > 0 else (
                0.0 if means[i] == means[j] else float("inf")
            )
            q_stats[i][j] = q_stats[j][i] = q
            sig[i][j] = sig[j][i] = q > q_crit
    return TukeyResult(
        group_means=tuple(means),
        q_statistics=tuple(tuple(row) for row in q_stats),
        significant=tuple(tuple(row) for row in sig),
        q_critical=q_crit,
        alpha=alpha,
    )


def tukey_hsd(groups: Sequence[Sequence[float]], alpha: float = 0.05) -> TukeyResult:
    """Tukey HSD pairwise comparisons against the tabulated critical value."""
    means, variances, ns = _group_summaries(groups)
    return _tukey_from_moments(means, variances, ns, alpha)


def tukey_from_summary(means, sds, ns, alpha: float = 0.05) -> TukeyResult:
    return _tukey_from_moments(
        [float(m) for m in means], [float(s) ** 2 for s in sds], [int(n) for n in ns],
        alpha,
    )


def analyze_groups(groups: Sequence[Sequence[float]], alpha: float = 0.05) -> StatResult:
    """ANOVA plus Tukey post-hoc (post-hoc only when ANOVA is significant)."""
    anova = anova_oneway(groups)
    tukey = tukey_hsd(groups, alpha) if anova.p_value < alpha else None
    return StatResult(anova=anova, tukey=tukey)


def load_fixtures() -> dict:
    """Embedded ex vivo reference results (three surgeons and the robot)."""
    text = resources.files("suturesim.fixtures").joinpath("outcome_fixtures.json").read_text()
    return json.loads(text)


_METRIC_COLUMNS = (
    ("bite_cov_percent", "Bite COV%"),
    ("spacing_cov_percent", "Spacing COV%"),
    ("lumen_reduction_percent", "Lumen reduction %"),
    ("bubble_leak_psi", "Bubble leak (PSI)"),
    ("time_per_stitch_s", "Time/stitch (s)"),
)


def _fmt_cell(stats: dict | None) -> str:
    if not stats:
        return "n/a"
    if "mean" in stats:
        sd = stats.get("sd")
        base = f"{stats['mean']:.2f}" if abs(stats["mean"]) < 10 else f"{stats['mean']:.0f}"
        if sd is not None:
            base += f" ± {sd:.2f}" if abs(stats["mean"]) < 10 else f" ± {sd:.0f}"
    else:
        base = f"{stats['value']:.0f}"
    if stats.get("n"):
        base += f" (n={stats['n']})"
    return base


def compare_report(
    simulated: dict,
    fixtures: dict | None = None,
    alpha: float = 0.05,
) -> dict:
    """Tabulate simulated run statistics beside the reference fixtures.

    simulated carries per-metric summary dicts plus optional raw per-run
    values under 'raw'. Group comparisons run on summary statistics only
    (the fixtures publish no raw data) and are flagged as such.
    """
    rows = []
    fixture_groups = (fixtures or {}).get("groups", [])
    for group in fixture_groups:
        rows.append({"name": group["name"], "source": "fixture",
                     **{key: group.get(key) for key, _ in _METRIC_COLUMNS}})
    rows.append({"name": "simulated", "source": "simulation",
                 **{key: simulated.get(key) for key, _ in _METRIC_COLUMNS}})

    degenerate = False
    for key in ("bite_cov_percent", "spacing_cov_percent"):
        cell = simulated.get(key)
        if cell and cell.get("value") == 0:
            degenerate = True

    comparisons = {}
    for key in ("lumen_reduction_percent", "time_per_stitch_s"):
        cells = [g.get(key) for g in fixture_groups] + [simulated.get(key)]
        names = [g["name"] for g in fixture_groups] + ["simulated"]
        usable = [(n, c) for n, c in zip(names, cells)
                  if c and c.get("mean") is not None and c.get("sd") is not None
                  and c.get("n", 0) >= 2]
        if len(usable) >= 2:
            means = [c["mean"] for _, c in usable]
            sds = [c["sd"] for _, c in usable]
            ns = [c["n"] for _, c in usable]
            anova = anova_from_summary(means, sds, ns)
            tukey = tukey_from_summary(means, sds, ns, alpha) if anova.p_value < alpha else None
            comparisons[key] = {
                "groups": [n for n, _ in usable],
                "anova": {"f": anova.f_statistic, "df_between": anova.df_between,
                          "df_within": anova.df_within, "p_value": anova.p_value},
                "tukey_significant_pairs": (
                    [
                        [usable[i][0], usable[j][0]]
                        for i in range(len(usable))
                        for j in range(i + 1, len(usable))
                        if tukey.significant[i][j]
                    ]
                    if tukey
                    else []
                ),
                "summary_stats_only": True,
            }

    return {
        "version": 1,
        "rows": rows,
        "comparisons": comparisons,
        "degenerate_zero_variance": degenerate,
        "fixtures_present": bool(fixture_groups),
    }


def render_report_markdown(report: dict) -> str:
    lines = ["# Outcome comparison", ""]
    header = "| Group | " + " | ".join(label for _, label in _METRIC_COLUMNS) + " |"
    lines.append(header)
    lines.append("|" + "---|" * (len(_METRIC_COLUMNS) + 1))
    for row in report["rows"]:
        cells = [_fmt_cell(row.get(key)) for key, _ in _METRIC_COLUMNS]
        lines.append(f"| {row['name']} | " + " | ".join(cells) + " |")
    lines.append("")
    if report["degenerate_zero_variance"]:
        lines.append("*Flag: zero placement variance (degenerate, e.g. noise-free run).*")
        lines.append("")
    for key, comp in report["comparisons"].items():
        label = dict(_METRIC_COLUMNS)[key]
        anova = comp["anova"]
        lines.append(
            f"**{label}** — one-way ANOVA on group summaries "
            f"(F({anova['df_between']},{anova['df_within']}) = {anova['f']:.2f}, "
            f"p = {anova['p_value']:.4g}); fixtures enter as summary statistics only."
        )
        if comp["tukey_significant_pairs"]:
            pairs = ", ".join(" vs ".join(p) for p in comp["tukey_significant_pairs"])
            lines.append(f"Significant pairs (Tukey HSD, alpha 0.05): {pairs}.")
        elif anova["p_value"] < 0.05:
            lines.append("No pair reached significance under Tukey HSD.")
        lines.append("")
    return "\n".join(lines)
