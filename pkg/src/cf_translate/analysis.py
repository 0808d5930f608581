"""Per-channel effect metrics and group statistics.

MCV is the normalized signed sum of counterfactual-minus-input differences
per channel; ACV the normalized sum of absolute differences (which also
catches add-here/remove-there shifts that cancel in MCV). Each metric is
normalized by its own maximum so the strongest channel scores exactly 1.
The report pairs these with two t-tests on per-image channel means: unpaired
between the two real groups, and paired between each source image and its
own counterfactual.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import DatasetManifest
from .inference import CounterfactualResult
from .stats import DEGENERATE, TestOutcome, paired_test, unpaired_test


def _check_consistent_channels(results: list[CounterfactualResult]) -> tuple[str, ...]:
    if not results:
        raise ValueError("need at least one counterfactual result")
    names = results[0].channel_names
    for res in results[1:]:
        if res.channel_names != names:
            raise ValueError(
                f"channel mismatch: {res.image_id!r} has {res.channel_names}, "
                f"expected {names}"
            )
    return names


def _raw_sums(results: list[CounterfactualResult], absolute: bool) -> np.ndarray:
    names = _check_consistent_channels(results)
    raw = np.zeros(len(names), dtype=np.float64)
    for res in results:
        diff = res.difference  # float64
        if absolute:
            diff = np.abs(diff)
        raw += diff.sum(axis=(1, 2))
    return raw


def _normalize(raw: np.ndarray) -> np.ndarray:
    z = float(np.abs(raw).max())
    if z == 0.0:
        return np.zeros_like(raw)
    return raw / z


def mcv(results: list[CounterfactualResult]) -> np.ndarray:
    """Signed per-channel variation, normalized so max |MCV_k| == 1."""
    return _normalize(_raw_sums(results, absolute=False))


def acv(results: list[CounterfactualResult]) -> np.ndarray:
    """Absolute per-channel variation, normalized so max ACV_k == 1."""
    return _normalize(_raw_sums(results, absolute=True))


def channel_means(pixels: np.ndarray) -> np.ndarray:
    """Spatial mean per channel of one (C, H, W) image."""
    return np.asarray(pixels, dtype=np.float64).mean(axis=(1, 2))


@dataclass(frozen=True)
class ChannelRow:
    channel: str
    acv: float
    mcv: float
    unpaired: TestOutcome
    paired: TestOutcome
    top: bool  # among the top_k channels by ACV


@dataclass
class ChannelReport:
    """Per-channel effect table, sorted by ACV descending."""

    rows: list[ChannelRow]
    source_group: int
    target_group: int
    n_source: int
    n_target: int

    def row(self, channel: str) -> ChannelRow:
        for r in self.rows:
            if r.channel == channel:
                return r
        raise KeyError(f"no channel {channel!r} in report")

    @property
    def top_rows(self) -> list[ChannelRow]:
        return [r for r in self.rows if r.top]


def build_report(
    results: list[CounterfactualResult],
    manifest: DatasetManifest,
    top_k: int = 7,
) -> ChannelReport:
    """Metrics plus unpaired/paired tests for every channel.

    The unpaired test compares per-image channel means between the two real
    groups; the paired test compares each source image against its own
    counterfactual, paired by image id.
    """
    names = _check_consistent_channels(results)
    if names != manifest.channel_names:
        raise ValueError(
            f"results carry channels {names}, manifest {manifest.channel_names}"
        )
    source_group = results[0].source_group
    if any(r.source_group != source_group for r in results):
        raise ValueError("results mix source groups")
    target_group = 1 - source_group

    source_ids = [e.image_id for e in manifest.group_entries(source_group)]
    if sorted(source_ids) != sorted(r.image_id for r in results):
        raise ValueError(
            "results do not cover the source group exactly: "
            f"expected {sorted(source_ids)}, got {sorted(r.image_id for r in results)}"
        )

    acv_vals = acv(results)
    mcv_vals = mcv(results)

    # per-image per-channel means: source originals, real targets, counterfactuals
    source_means = np.stack([channel_means(r.input_pixels) for r in results])
    generated_means = np.stack([channel_means(r.output_pixels) for r in results])
    target_imgs = manifest.load_group(target_group)
    target_means = np.stack([channel_means(img.pixels) for img in target_imgs])
    result_ids = [r.image_id for r in results]

    order = sorted(
        range(len(names)), key=lambda k: (-acv_vals[k], names[k])
    )
    top = set(order[:top_k])
    rows = []
    for k in order:
        unp = unpaired_test(source_means[:, k], target_means[:, k])
        par = paired_test(
            source_means[:, k],
            generated_means[:, k],
            a_ids=result_ids,
            b_ids=result_ids,
        )
        rows.append(
            ChannelRow(
                channel=names[k],
                acv=float(acv_vals[k]),
                mcv=float(mcv_vals[k]),
                unpaired=unp,
                paired=par,
                top=k in top,
            )
        )
    return ChannelReport(
        rows=rows,
        source_group=source_group,
        target_group=target_group,
        n_source=len(results),
        n_target=len(target_imgs),
    )


# ---------------------------------------------------------------------------
# Report output

REPORT_COLUMNS = ["channel", "acv", "mcv", "p_unpaired", "p_paired"]


def _p_cell(outcome: TestOutcome) -> str:
    if outcome.status == DEGENERATE:
        return DEGENERATE
    return repr(outcome.p_value)


def write_report_csv(report: ChannelReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [row.channel, repr(row.acv), repr(row.mcv), _p_cell(row.unpaired), _p_cell(row.paired)]
            )
    return path


def _outcome_json(outcome: TestOutcome) -> dict:
    return {
        "statistic": outcome.statistic,
        "p_value": outcome.p_value,
        "df": outcome.df,
        "status": outcome.status,
    }


def write_report_json(report: ChannelReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "source_group": report.source_group,
        "target_group": report.target_group,
        "n_source": report.n_source,
        "n_target": report.n_target,
        "rows": [
            {
                "channel": row.channel,
                "acv": row.acv,
                "mcv": row.mcv,
                "unpaired": _outcome_json(row.unpaired),
                "paired": _outcome_json(row.paired),
                "top": row.top,
            }
            for row in report.rows
        ],
    }
    path.write_text(json.dumps(payload, indent=1))
    return path


def write_report_figures(report: ChannelReport, out_dir: Path | str) -> list[Path]:
    """Bar charts of ACV and MCV for the top channels."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = report.top_rows
    labels = [r.channel for r in rows]
    paths = []
    for attr, fname, color in (("acv", "acv_bar.png", "#4878d0"), ("mcv", "mcv_bar.png", "#d65f5f")):
        values = [getattr(r, attr) for r in rows]
        fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(rows) + 1.5), 3.2))
        ax.bar(range(len(rows)), values, color=color)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel(attr.upper())
        ax.axhline(0.0, color="black", linewidth=0.6)
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths
