"""API routes over an experiment output directory: report, rank tables, trajectories and summary."""

import json
from pathlib import Path

from fastapi import APIRouter, HTTPException

from nrmf.config import get_out_dir
from nrmf.errors import NrmfError
from nrmf.reports import (
    FOUR_PATH_COLUMNS,
    read_compression_csv,
    read_csv_rows,
    read_rank_csv,
    read_trajectory_csv,
)

api_router = APIRouter()


def _safe_output_path(out_root: Path, subpath: str) -> Path | None:
    """Resolve subpath under the output root; None on path escape or a missing file."""
    full = (out_root / subpath).resolve()
    try:
        full.relative_to(out_root.resolve())
    except ValueError:
        return None
    if not full.exists() or not full.is_file():
        return None
    return full


def _require(subpath: str) -> Path:
    path = _safe_output_path(get_out_dir(), subpath)
    if path is None:
        raise HTTPException(status_code=404, detail="Not found")
    return path


@api_router.get("/report")
async def get_report():
    """report.csv as rows; compression reports also carry their totals."""
    path = _require("report.csv")
    rows = read_csv_rows(path)
    if rows and set(FOUR_PATH_COLUMNS) <= set(rows[0]):
        return {"kind": "four-paths", "rows": rows}
    report, _ = read_compression_csv(path)
    return {
        "kind": "compression",
        "rows": [
            {
                "layer": r.layer,
                "D": r.d,
                "S": r.s,
                "T": r.t,
                "r3": r.r3,
                "r4": r.r4,
                "original": r.original,
                "compressed": r.compressed,
                "ratio": r.ratio,
            }
            for r in report.rows
        ],
        "total": {"original": report.total_original, "compressed": report.total_compressed, "ratio": report.ratio},
    }


@api_router.get("/ranks")
async def list_ranks():
    ranks_dir = get_out_dir() / "ranks"
    names = sorted(p.stem for p in ranks_dir.glob("*.csv")) if ranks_dir.is_dir() else []
    return {"ranks": names, "total": len(names)}


@api_router.get("/ranks/{name}")
async def get_ranks(name: str):
    path = _require(f"ranks/{name}.csv")
    try:
        table = read_rank_csv(path)
    except NrmfError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    return {
        "name": name,
        "layers": [
            {
                "layer": pair.layer,
                "S": pair.s,
                "T": pair.t,
                "r3": pair.r3,
                "r4": pair.r4,
                "retained1": pair.retained1,
                "retained2": pair.retained2,
                "method": pair.method,
            }
            for pair in table.values()
        ],
    }


@api_router.get("/trajectories")
async def list_trajectories():
    """Trajectory CSVs as '<arm>/<layer>' (or '<layer>' for plain training runs)."""
    root = get_out_dir() / "trajectories"
    names = sorted(p.relative_to(root).with_suffix("").as_posix() for p in root.rglob("*.csv")) if root.is_dir() else []
    return {"trajectories": names, "total": len(names)}


@api_router.get("/trajectories/{name:path}")
async def get_trajectory(name: str):
    path = _require(f"trajectories/{name}.csv")
    return {"name": name, "records": read_trajectory_csv(path)}


@api_router.get("/summary")
async def get_summary():
    path = _require("summary.json")
    with open(path, encoding="utf-8") as f:
        return json.load(f)
