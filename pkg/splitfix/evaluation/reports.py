"""
    Report files of the evaluation & tracing stages. Every file starts with
    the provenance line of the run configuration.
"""

import csv
import io
from pathlib import Path
from typing import IO, Iterable, Sequence

import matplotlib
from matplotlib.figure import Figure

from core.utils import atomic_write, provenance_line
from splitfix.evaluation.metrics import Confusion, EvalReport
from splitfix.evaluation.tracing import TracingResult
from splitfix.registration import CandidatePair


def _write_text(path: Path, text: str) -> None:
    def _write(file: IO[bytes]) -> None:
        file.write(text.encode("utf-8"))

    atomic_write(path, _write)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], config_digest: str) -> None:
    buffer = io.StringIO()
    buffer.write(provenance_line(config_digest) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)

    _write_text(path, buffer.getvalue())


def write_pr_curve(path: Path, report: EvalReport, config_digest: str) -> None:
    write_csv(
        path,
        ("threshold", "precision", "recall"),
        ([f"{point.threshold:.9g}", f"{point.precision:.6f}", f"{point.recall:.6f}"] for point in report.curve),
        config_digest
    )


def _confusion_columns(confusion: Confusion) -> list:
    return [confusion.tp, confusion.fp, confusion.tn, confusion.fn, f"{confusion.precision:.6f}", f"{confusion.recall:.6f}", f"{confusion.f1:.6f}"]


def write_block_report(path: Path, report: EvalReport, config_digest: str) -> None:
    """ Writes one row per spatial block & a final "all" row over every pair. """

    rows: list[list] = [[*block, *_confusion_columns(confusion)] for block, confusion in (report.blocks or {}).items()]
    rows.append(["all", "", "", *_confusion_columns(report.confusion)])

    write_csv(path, ("block_x", "block_y", "block_z", "tp", "fp", "tn", "fn", "precision", "recall", "f1"), rows, config_digest)


def write_predictions(path: Path, pairs: Sequence[CandidatePair], probabilities: Sequence[float], config_digest: str) -> None:
    if len(pairs) != len(probabilities):
        raise ValueError("Every pair needs its probability.")

    write_csv(
        path,
        ("seg_a", "seg_b", "probability", "label"),
        ([pair.seg_a, pair.seg_b, f"{float(probability):.6f}", pair.label] for pair, probability in zip(pairs, probabilities)),
        config_digest
    )


def write_run_lengths(path: Path, result: TracingResult, config_digest: str) -> None:
    write_csv(
        path,
        ("skeleton", "cable_length_nm", "baseline_erl_nm", "erl_nm", "merged_nodes", "background_nodes"),
        (
            [row.skeleton_index, f"{row.cable_length_nm:.3f}", f"{baseline.erl_nm:.3f}", f"{row.erl_nm:.3f}", row.merged_nodes, row.background_nodes]
            for row, baseline in zip(result.table, result.baseline_table)
        ),
        config_digest
    )


def write_clusters(path: Path, clusters: dict[int, int], config_digest: str) -> None:
    write_csv(path, ("segment_id", "cluster_id"), sorted(clusters.items()), config_digest)


def write_summary(path: Path, config_digest: str, report: EvalReport | None = None, tracing: TracingResult | None = None, extra: dict[str, object] | None = None) -> None:
    """ Writes a plain "key: value" summary of whichever results are given. """

    lines: list[str] = [provenance_line(config_digest)]

    if report is not None:
        confusion: Confusion = report.confusion
        lines += [
            f"pairs: {confusion.total}",
            f"precision: {report.precision:.6f}",
            f"recall: {report.recall:.6f}",
            f"f1: {report.f1:.6f}",
            f"tp: {confusion.tp}",
            f"fp: {confusion.fp}",
            f"tn: {confusion.tn}",
            f"fn: {confusion.fn}"
        ]

    if tracing is not None:
        lines += [
            f"baseline_erl_nm: {tracing.baseline_erl_nm:.3f}",
            f"erl_nm: {tracing.erl_nm:.3f}",
            f"erl_delta_nm: {tracing.delta_nm:.3f}",
            f"erl_relative_change: {tracing.relative_change:.6f}",
            f"clusters: {len(set(tracing.clusters.values()))}"
        ]

    key: str
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")

    _write_text(path, "\n".join(lines) + "\n")


def write_pr_plot(path: Path, curves: dict[str, EvalReport], config_digest: str, title: str = "Connectivity precision & recall") -> None:
    """
        Writes an SVG plot of one PR curve per labelled report. The file
        carries no creation date & a fixed hash salt so reruns are
        byte-identical.
    """

    with matplotlib.rc_context({"svg.hashsalt": config_digest, "svg.fonttype": "none"}):
        figure = Figure(figsize=(5, 5))
        axes = figure.subplots()

        label: str
        report: EvalReport
        for label, report in curves.items():
            axes.plot([point.recall for point in report.curve], [point.precision for point in report.curve], label=f"{label} (F1 {report.f1:.3f})")

        axes.set_xlabel("Recall")
        axes.set_ylabel("Precision")
        axes.set_xlim(0, 1.02)
        axes.set_ylim(0, 1.02)
        axes.set_title(title)
        axes.grid(True, ls="--", alpha=0.3)
        axes.legend(loc="lower left")
        figure.tight_layout()

        buffer = io.BytesIO()
        figure.savefig(buffer, format="svg", metadata={"Date": None, "Description": provenance_line(config_digest)})

    def _write(file: IO[bytes]) -> None:
        file.write(buffer.getvalue())

    atomic_write(path, _write)
