"""
Correlation studies over a table of sessions.

Every variable in the requested pairs is checked for normality; each pair gets a
Pearson coefficient and p-value. A pair is reported only when p < alpha and at least
one of its two variables passed the normality check. Urban and interurban sessions
are analysed separately.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from drivemon.analysis.loader import numeric_column
from drivemon.analysis.stats import NormalityResult, pearson, pearson_p, shapiro_wilk
from drivemon.core.meta import PhysicalState, ScenarioClass
from drivemon.errors import DegenerateInput, InvalidArgument, MissingVariable, UnsupportedSize
from drivemon.harness.vehicle import OffenceKind
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]

DRIVING_VARIABLES = ("angular_speed_mean", "angular_speed_std", "mean_speed", "mean_rpm", "mean_fuel")
COMPARED_STATES = (PhysicalState.RESTED.value, PhysicalState.TIRED.value)
SCENARIOS = (ScenarioClass.URBAN.value, ScenarioClass.INTERURBAN.value)


@dataclass(frozen=True)
class CorrelationResult:
    x_name: str
    y_name: str
    rho: float
    n: int
    p: float
    significant: bool
    gate_passed: bool = True
    group: str = "ALL"
    note: str = ""

    @property
    def reported(self) -> bool:
        return self.significant and self.gate_passed


@dataclass
class StudyReport:
    normality: List[NormalityResult] = field(default_factory=list)
    correlations: List[CorrelationResult] = field(default_factory=list)
    state_comparison: Optional[pd.DataFrame] = None
    low_attention_counts: Dict[str, int] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    alpha: float = 0.05

    @property
    def significant_only(self) -> List[CorrelationResult]:
        return [c for c in self.correlations if c.reported]


def offence_pairs() -> List[Pair]:
    return [(x, f"offence_rate.{kind.value}") for x in DRIVING_VARIABLES for kind in OffenceKind]


def experience_pairs() -> List[Pair]:
    return [("offence_rate", x) for x in ("license_years", "game_experience", "racing_experience")]


def sleepiness_pairs() -> List[Pair]:
    return [("offence_count", x) for x in ("kss", "sss", "ess")]


def attention_pairs() -> List[Pair]:
    return [
        ("low_attention_periods", x)
        for x in ("kss", "sss", "ess", "age", "license_years", "racing_experience")
    ]


PRESETS = {
    "offences": offence_pairs,
    "experience": experience_pairs,
    "sleepiness": sleepiness_pairs,
    "attention": attention_pairs,
}


def preset_pairs(name: str) -> List[Pair]:
    try:
        return PRESETS[name]()
    except KeyError:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def parse_pairs(text: str) -> List[Pair]:
    """`a:b,c:d` -> [(a, b), (c, d)]"""
    pairs = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        x, sep, y = token.partition(":")
        if not sep or not x or not y:
            raise InvalidArgument(f"pair {token!r} is not of the form x:y")
        pairs.append((x, y))
    return pairs


def _unique_pairs(pairs: Iterable[Pair]) -> List[Pair]:
    seen = set()
    unique = []
    for x, y in pairs:
        key = frozenset((x, y))
        if x == y or key in seen:
            continue
        seen.add(key)
        unique.append((x, y))
    return unique


def _resolve(table: pd.DataFrame, name: str) -> np.ndarray:
    if name not in table.columns:
        raise MissingVariable(name, str(table.index[0]))
    values = numeric_column(table, name)
    missing = np.flatnonzero(~np.isfinite(values))
    if missing.size:
        raise MissingVariable(name, str(table.index[missing[0]]))
    return values


def _groups(table: pd.DataFrame, by_scenario: bool) -> List[Tuple[str, pd.DataFrame]]:
    if not by_scenario or "scenario_class" not in table.columns:
        return [("ALL", table)]
    return [(s, table[table["scenario_class"] == s]) for s in SCENARIOS if (table["scenario_class"] == s).any()]


def correlation_study(
    table: pd.DataFrame,
    pairs: Sequence[Pair],
    alpha: Optional[float] = None,
    by_scenario: bool = True,
) -> StudyReport:
    """
    Run the normality gate and the correlation tests for every pair.

    Args:
        table: One row per session (see loader.load_study_table)
        pairs: (x, y) variable names
        alpha: Significance level (defaults to Config.ALPHA)
        by_scenario: Analyse urban and interurban sessions separately

    Returns:
        StudyReport: Every tested pair exactly once per scenario group
    """
    alpha = Config.ALPHA if alpha is None else alpha
    table = table.sort_index()
    pairs = _unique_pairs(pairs)
    report = StudyReport(alpha=alpha)
    if "low_attention_periods" in table.columns:
        counts = numeric_column(table, "low_attention_periods")
        report.low_attention_counts = {
            str(key): int(count) for key, count in zip(table.index, counts) if np.isfinite(count)
        }
    for group, rows in _groups(table, by_scenario):
        if len(rows) < 3:
            report.notes.append(f"{group}: only {len(rows)} sessions, group skipped")
            continue
        names = list(dict.fromkeys(name for pair in pairs for name in pair))
        values = {name: _resolve(rows, name) for name in names}
        normal: Dict[str, bool] = {}
        for name in names:
            try:
                result = shapiro_wilk(values[name], variable=name, alpha=alpha)
            except (DegenerateInput, UnsupportedSize) as e:
                report.notes.append(f"{group}: {name} excluded ({e})")
                logger.warning(f"{group}: excluding {name}: {e}")
                continue
            report.normality.append(replace(result, group=group))
            normal[name] = result.normal_at_alpha
        for x, y in pairs:
            if x not in normal or y not in normal:
                continue
            rho = pearson(values[x], values[y])
            p = pearson_p(rho, len(rows))
            gate = normal[x] or normal[y]
            report.correlations.append(
                CorrelationResult(x, y, rho, len(rows), p, p < alpha, gate, group, "" if gate else "gate-failed")
            )
    logger.info(
        f"tested {len(report.correlations)} pairs, {len(report.significant_only)} significant at alpha={alpha}"
    )
    return report


def state_comparison(table: pd.DataFrame) -> pd.DataFrame:
    """
    Per participant: mean HRV by physical state and scenario class, mean EMG and GSR by
    physical state. Cells without sessions are NaN.
    """
    for column in ("participant_id", "physical_state"):
        if column not in table.columns:
            raise InvalidArgument(f"state comparison needs {column} in every session")
    participants = sorted(table["participant_id"].dropna().unique())
    out = pd.DataFrame(index=pd.Index(participants, name="participant_id"))
    compared = table[table["physical_state"].isin(COMPARED_STATES)]
    for state in COMPARED_STATES:
        rows = compared[compared["physical_state"] == state]
        for scenario in SCENARIOS:
            column = f"hrv.{state}.{scenario}"
            out[column] = math.nan
            if "hrv" in rows.columns and "scenario_class" in rows.columns:
                subset = rows[rows["scenario_class"] == scenario]
                out[column] = pd.to_numeric(subset["hrv"], errors="coerce").groupby(subset["participant_id"]).mean()
        for sensor in ("emg", "gsr"):
            column = f"{sensor}.{state}"
            out[column] = math.nan
            if f"{sensor}_mean" in rows.columns:
                out[column] = pd.to_numeric(rows[f"{sensor}_mean"], errors="coerce").groupby(rows["participant_id"]).mean()
    return out
