"""
Report writers: study tables, per-session features and plot data, all plain CSV.

normality.csv        group,variable,n,w,p,normal
correlations.csv     group,x,y,n,rho,p,significant,gate_passed,reported,note
state_comparison.csv participant_id, hrv.<STATE>.<SCENARIO>, emg.<STATE>, gsr.<STATE>
summary.txt          the same in words
"""

import logging
from pathlib import Path
from typing import List, Union

import pandas as pd

from drivemon.analysis.loader import SessionFeatures
from drivemon.analysis.study import StudyReport
from drivemon.core.signal import SensorKind
from drivemon.features.gyro import attention_windows, classify_low_attention

logger = logging.getLogger(__name__)


def _write(frame: pd.DataFrame, path: Path, index: bool = False) -> Path:
    frame.to_csv(path, index=index, lineterminator="\n")
    logger.info(f"wrote {path}")
    return path


def normality_frame(report: StudyReport) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"group": r.group, "variable": r.variable, "n": r.n, "w": r.w, "p": r.p, "normal": r.normal_at_alpha}
            for r in report.normality
        ],
        columns=["group", "variable", "n", "w", "p", "normal"],
    )


def correlations_frame(report: StudyReport) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "group": c.group,
                "x": c.x_name,
                "y": c.y_name,
                "n": c.n,
                "rho": c.rho,
                "p": c.p,
                "significant": c.significant,
                "gate_passed": c.gate_passed,
                "reported": c.reported,
                "note": c.note,
            }
            for c in report.correlations
        ],
        columns=["group", "x", "y", "n", "rho", "p", "significant", "gate_passed", "reported", "note"],
    )


def summary_text(report: StudyReport) -> str:
    lines = [f"alpha = {report.alpha:g}", ""]
    lines.append(f"normality ({len(report.normality)} variables tested)")
    for r in report.normality:
        verdict = "normal" if r.normal_at_alpha else "not normal"
        lines.append(f"  {r.variable}: W={r.w:.4f} p={r.p:.4f} ({verdict})")
    lines.append("")
    lines.append(f"correlations: {len(report.correlations)} tested, {len(report.significant_only)} significant")
    for c in report.significant_only:
        lines.append(f"  [{c.group}] {c.x_name} ~ {c.y_name}: rho={c.rho:.3f} p={c.p:.4f} n={c.n}")
    gate_failed = [c for c in report.correlations if c.significant and not c.gate_passed]
    if gate_failed:
        lines.append(f"  {len(gate_failed)} pairs had p < alpha but neither variable passed normality")
    if report.low_attention_counts:
        lines.append("")
        lines.append("low attention periods")
        for key, count in sorted(report.low_attention_counts.items()):
            lines.append(f"  {key}: {count}")
    if report.notes:
        lines.append("")
        lines.append("notes")
        lines.extend(f"  {note}" for note in report.notes)
    return "\n".join(lines) + "\n"


def write_study_report(report: StudyReport, out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [
        _write(normality_frame(report), out_dir / "normality.csv"),
        _write(correlations_frame(report), out_dir / "correlations.csv"),
    ]
    if report.state_comparison is not None:
        paths.append(_write(report.state_comparison, out_dir / "state_comparison.csv", index=True))
    summary = out_dir / "summary.txt"
    summary.write_text(summary_text(report), encoding="utf-8")
    paths.append(summary)
    return paths


def write_features(features: SessionFeatures, out_dir: Union[str, Path, None] = None) -> Path:
    """One-row features.csv with every variable computed for the session."""
    out_dir = Path(out_dir or features.folder)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([{"session": features.key, **features.variables}])
    return _write(frame, out_dir / "features.csv")


def write_plot_data(features: SessionFeatures, out_dir: Union[str, Path, None] = None) -> List[Path]:
    """Per-window and per-block series behind the steering and physiology graphs."""
    out_dir = Path(out_dir or features.folder)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    state = features.steering
    if state is not None:
        windows = classify_low_attention(attention_windows(state))
        paths.append(
            _write(
                pd.DataFrame(
                    [
                        {
                            "window": w.index,
                            "start_ms": w.index * w.span_ms,
                            "end_ms": (w.index + 1) * w.span_ms,
                            "samples": w.sample_count,
                            "crossings": w.crossings_in_window,
                            "max_updated": w.max_updated_in_window,
                            "low_attention": w.low_attention,
                        }
                        for w in windows
                    ],
                    columns=["window", "start_ms", "end_ms", "samples", "crossings", "max_updated", "low_attention"],
                ),
                out_dir / "plot_windows.csv",
            )
        )
        paths.append(_write(_blocks_frame(state.turn_blocks.complete_blocks()), out_dir / "plot_turn_blocks.csv"))
        events = [(i, "max_update") for i in state.max_update_events] + [(i, "zero_crossing") for i in state.crossing_events]
        events.sort()
        paths.append(
            _write(
                pd.DataFrame(
                    [
                        {"sample": i, "t_ms": state.fs.timestamp_ms(i), "speed": state.speeds[i], "event": event}
                        for i, event in events
                    ],
                    columns=["sample", "t_ms", "speed", "event"],
                ),
                out_dir / "plot_speed_events.csv",
            )
        )
    for kind in (SensorKind.EMG, SensorKind.GSR):
        summary = features.physio.get(kind)
        if summary is not None:
            name = f"plot_{kind.value.lower()}_blocks.csv"
            paths.append(_write(_blocks_frame(summary.block_series), out_dir / name))
    return paths


def _blocks_frame(blocks) -> pd.DataFrame:
    return pd.DataFrame(
        [{"block": b.block_index, "mean": b.mean, "std": b.std} for b in blocks], columns=["block", "mean", "std"]
    )
