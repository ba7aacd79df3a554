"""CSV and JSON outputs. Column meanings are listed in docs/csv_schemas.md."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from nrmf.compressor import CompressionReport, ReportRow, format_count, format_with_ratio
from nrmf.errors import KernelFormatError, MissingOutputError
from nrmf.rank_selection import RankPair
from nrmf.trainer import SvTrajectory

TRAJECTORY_COLUMNS = ["epoch", "mode", "index", "eigenvalue"]
RANK_COLUMNS = ["layer", "S", "T", "r3", "r4", "e1", "e2", "retained1", "retained2", "method"]
COMPRESSION_COLUMNS = ["layer", "D", "S", "T", "r3", "r4", "original", "compressed", "ratio"]
FOUR_PATH_COLUMNS = [
    "path",
    "rank_method",
    "init_method",
    "source",
    "conv_original",
    "conv_compressed",
    "network_params",
    "accuracy_before",
    "accuracy_after",
    "baseline_accuracy",
]
TOTAL_ROW = "TOTAL"


def _num(x: float | None) -> str:
    """Shortest round-trip text, so identical runs give identical bytes."""
    return "" if x is None else repr(float(x))


def _open_csv(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def write_trajectory_csv(traj: SvTrajectory, path: Path) -> Path:
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for record in traj.records:
            for mode, values in ((3, record.lambdas), (4, record.xis)):
                for i, value in enumerate(values, start=1):
                    writer.writerow([record.epoch, mode, i, _num(value)])
    return Path(path)


def read_trajectory_csv(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return [
            {"epoch": int(row["epoch"]), "mode": int(row["mode"]), "index": int(row["index"]), "eigenvalue": float(row["eigenvalue"])}
            for row in csv.DictReader(f)
        ]


def write_rank_csv(pairs: Iterable[RankPair], path: Path) -> Path:
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RANK_COLUMNS)
        for pair in pairs:
            writer.writerow(
                [pair.layer, pair.s, pair.t, pair.r3, pair.r4, _num(pair.e1), _num(pair.e2),
                 _num(pair.retained1), _num(pair.retained2), pair.method]
            )
    return Path(path)


def read_rank_csv(path: Path) -> dict[str, RankPair]:
    """Rank table keyed by layer; hand-edited files only need layer, S, T, r3, r4."""
    try:
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise KernelFormatError(f"cannot read rank table {path}: {e}") from e
    table = {}
    for row in rows:
        try:
            table[row["layer"]] = RankPair(
                layer=row["layer"],
                s=int(row["S"]),
                t=int(row["T"]),
                r3=int(row["r3"]),
                r4=int(row["r4"]),
                e1=float(row.get("e1") or 0.0),
                e2=float(row.get("e2") or 0.0),
                retained1=float(row.get("retained1") or 0.0),
                retained2=float(row.get("retained2") or 0.0),
                method=row.get("method") or "",
            )
        except (KeyError, TypeError, ValueError) as e:
            raise KernelFormatError(f"{path}: bad rank row {row}: {e}") from e
    return table


def write_compression_csv(report: CompressionReport, path: Path) -> Path:
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COMPRESSION_COLUMNS)
        for row in report.rows:
            writer.writerow([row.layer, row.d, row.s, row.t, row.r3, row.r4, row.original, row.compressed, _num(row.ratio)])
        writer.writerow([TOTAL_ROW, "", "", "", "", "", report.total_original, report.total_compressed, _num(report.ratio)])
    return Path(path)


def read_compression_csv(path: Path) -> tuple[CompressionReport, dict]:
    """Rows as a CompressionReport plus the stored TOTAL row (empty when absent)."""
    if not Path(path).exists():
        raise MissingOutputError(f"no report at {path}")
    report = CompressionReport()
    total: dict = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            if row["layer"] == TOTAL_ROW:
                total = {"original": int(row["original"]), "compressed": int(row["compressed"])}
                continue
            report.rows.append(
                ReportRow(
                    layer=row["layer"],
                    d=int(row["D"]),
                    s=int(row["S"]),
                    t=int(row["T"]),
                    r3=int(row["r3"]),
                    r4=int(row["r4"]),
                    original=int(row["original"]),
                    compressed=int(row["compressed"]),
                )
            )
    return report, total


def format_report(report: CompressionReport) -> list[str]:
    """Human-readable table in the K/M style; the CSV keeps exact integers."""
    lines = [f"{'layer':<12} {'S/R3':>10} {'T/R4':>10}  params"]
    for row in report.rows:
        lines.append(f"{row.layer:<12} {row.s:>10} {row.t:>10}  {format_count(row.original)}")
        lines.append(
            f"{'':<12} {row.r3:>10} {row.r4:>10}  {format_with_ratio(row.original, row.compressed)}"
        )
    if report.rows:
        lines.append(
            f"{'total':<12} {'':>10} {'':>10}  "
            f"{format_count(report.total_original)} -> {format_with_ratio(report.total_original, report.total_compressed)}"
        )
    return lines


@dataclass(frozen=True)
class PathResult:
    """One fine-tuning path of the ranks x initialization comparison."""

    path: str
    rank_method: str
    init_method: str
    source: str
    report: CompressionReport
    baseline_accuracy: float


def write_four_paths_csv(results: Iterable[PathResult], path: Path) -> Path:
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(FOUR_PATH_COLUMNS)
        for r in results:
            writer.writerow(
                [r.path, r.rank_method, r.init_method, r.source, r.report.total_original,
                 r.report.total_compressed, r.report.network_params_after,
                 _num(r.report.accuracy_before), _num(r.report.accuracy_after), _num(r.baseline_accuracy)]
            )
    return Path(path)


def read_csv_rows(path: Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def write_json(data: dict, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
