"""Command-line entry point: nrmf <command>."""

import logging
import os
import sys
from functools import wraps
from pathlib import Path

import click

from nrmf.config import METHODS, build_spec, get_data_dir, get_log_level, get_mnist_url, load_config_file
from nrmf.errors import IO_ERROR_CLASS, ConfigError, MissingOutputError, NrmfError, ReportMismatchError

logger = logging.getLogger(__name__)


def _fail(ctx: click.Context, error_class: str, error: Exception, code: int = 1):
    message = " ".join(str(error).split())
    click.echo(f"error: {error_class}: {message}", err=True)
    ctx.exit(code)


class NrmfGroup(click.Group):
    """Turns library and OS errors into one 'error: <class>: <message>' line on stderr."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except NrmfError as e:
            _fail(ctx, e.error_class, e, 2 if isinstance(e, ConfigError) else 1)
        except OSError as e:
            _fail(ctx, IO_ERROR_CLASS, e)


def _configure_logging() -> None:
    logging.basicConfig(
        level=get_log_level(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def spec_options(func=None, *, multi_p: bool = False):
    """
    --config plus the overrides every experiment command accepts.

    With multi_p, --p may repeat; the command then receives the thresholds
    as `thresholds` and the ExperimentSpec carries the first one.
    """
    if func is None:
        return lambda f: spec_options(f, multi_p=multi_p)

    @click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="Flat key = value config file.")
    @click.option("--seed", type=int, default=None)
    @click.option("--alpha", type=float, default=None, help="Regularizer weight; 0 disables it.")
    @click.option("--p", "p", type=float, default=None, multiple=multi_p, help="Energy threshold for NRMF ranks.")
    @click.option("--out-dir", type=click.Path(path_type=Path), default=None)
    @click.option("--method", type=click.Choice(METHODS), default=None, help="Rank method.")
    @click.option("--data-dir", type=click.Path(path_type=Path), default=None, help="MNIST IDX directory.")
    @click.option("--epochs", type=int, default=None)
    @wraps(func)
    def wrapper(config_path, seed, alpha, p, out_dir, method, data_dir, epochs, **kwargs):
        values = load_config_file(config_path) if config_path else {}
        if multi_p:
            kwargs["thresholds"] = tuple(p)
            p = p[0] if p else None
        spec = build_spec(
            values, seed=seed, alpha=alpha, p=p, out_dir=out_dir, method=method, data_dir=data_dir, epochs=epochs
        )
        return func(spec, **kwargs)

    return wrapper


def _checkpoint_dir(spec, checkpoint: Path | None, default: str) -> Path:
    path = checkpoint or Path(spec.out_dir) / "checkpoints" / default
    if not (Path(path) / "manifest.json").exists():
        raise MissingOutputError(f"no checkpoint at {path}")
    return Path(path)


@click.group(cls=NrmfGroup)
def main():
    """Nuclear-norm regularized training and Tucker-2 compression of conv nets."""
    _configure_logging()


@main.command()
@spec_options
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None, help="Warm-start from this checkpoint.")
def train(spec, checkpoint: Path | None):
    """Train the model with the regularizer and select NRMF ranks."""
    from nrmf.engine.checkpoint import load_network
    from nrmf.engine.training import evaluate
    from nrmf.experiments import load_datasets, train_model

    train_set, test_set = load_datasets(spec)
    net = load_network(_checkpoint_dir(spec, checkpoint, "")) if checkpoint else None
    result = train_model(spec, train_set, net)
    accuracy, loss = evaluate(result.net, test_set.inputs(), test_set.targets())
    click.echo(f"test accuracy {accuracy!r} loss {loss!r}")
    for pair in result.ranks.values():
        click.echo(f"{pair.layer}: ({pair.s}, {pair.t}) -> ({pair.r3}, {pair.r4})")


@main.command("select-ranks")
@spec_options(multi_p=True)
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
def select_ranks_cmd(spec, checkpoint: Path | None, thresholds: tuple[float, ...]):
    """Write rank tables for a checkpoint: ranks/nrmf_p<p>.csv per --p, or ranks/vbmf.csv."""
    from nrmf.engine.checkpoint import load_network
    from nrmf.experiments import p_tag, rank_table
    from nrmf.reports import write_rank_csv

    net = load_network(_checkpoint_dir(spec, checkpoint, "trained"))
    out = Path(spec.out_dir) / "ranks"
    if spec.method == "vbmf":
        runs = [("vbmf", spec.p)]
    else:
        thresholds = dict.fromkeys(thresholds or (spec.p,))
        for p in thresholds:
            if not 0 < p <= 1:
                raise ConfigError(f"p must lie in (0, 1], got {p}")
        runs = [(f"nrmf_{p_tag(p)}", p) for p in thresholds]
    for stem, p in runs:
        table = rank_table(net, spec.method, p)
        path = write_rank_csv(table.values(), out / f"{stem}.csv")
        click.echo(f"wrote {path}")
        for pair in table.values():
            click.echo(f"  {pair.layer}: ({pair.s}, {pair.t}) -> ({pair.r3}, {pair.r4})")


@main.command()
@spec_options
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--ranks", "ranks_path", type=click.Path(path_type=Path), default=None, help="Rank CSV; computed from the checkpoint when omitted.")
@click.option("--source", type=click.Choice(["fresh", "swap"]), default="fresh", show_default=True)
@click.option("--partial", is_flag=True, help="Leave layers missing from the rank table dense.")
def compress(spec, checkpoint: Path | None, ranks_path: Path | None, source: str, partial: bool):
    """Factorize conv layers and write checkpoints/compressed and report.csv."""
    from nrmf.compressor import compress_network
    from nrmf.engine.checkpoint import load_network, save_network
    from nrmf.experiments import rank_table
    from nrmf.reports import format_report, read_rank_csv, write_compression_csv

    net = load_network(_checkpoint_dir(spec, checkpoint, "trained"))
    if ranks_path is not None:
        if not ranks_path.exists():
            raise MissingOutputError(f"no rank table at {ranks_path}")
        table = read_rank_csv(ranks_path)
    else:
        table = rank_table(net, spec.method, spec.p)
    compressed, report = compress_network(net, table, source, method=spec.method.upper(), partial=partial)
    out = Path(spec.out_dir)
    save_network(compressed, out / "checkpoints" / "compressed")
    write_compression_csv(report, out / "report.csv")
    for line in format_report(report):
        click.echo(line)


@main.command("fine-tune")
@spec_options
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
def fine_tune_cmd(spec, checkpoint: Path | None):
    """Fine-tune a (compressed) checkpoint without the regularizer."""
    from nrmf.engine.checkpoint import load_network, save_network
    from nrmf.experiments import fine_tune, load_datasets

    net = load_network(_checkpoint_dir(spec, checkpoint, "compressed"))
    train_set, test_set = load_datasets(spec)
    before, after = fine_tune(net, spec, train_set, test_set)
    save_network(net, Path(spec.out_dir) / "checkpoints" / "fine-tuned")
    click.echo(f"accuracy before {before!r} after {after!r}")


@main.command("sv-experiment")
@spec_options
def sv_experiment(spec):
    """Train with and without the regularizer and log the Gram spectra per epoch."""
    from nrmf.experiments import run_sv_experiment

    result = run_sv_experiment(spec)
    for name, arms in result.summary["layers"].items():
        for arm, trend in arms.items():
            click.echo(
                f"{name} {arm}: sum(lambda) {trend['lambda_initial']!r} -> {trend['lambda_final']!r} ({trend['lambda_trend']})"
            )


@main.command("four-paths")
@spec_options
def four_paths(spec):
    """Compare {NRMF, VBMF} ranks x {NRMF, VBMF} initialization after fine-tuning."""
    from nrmf.compressor import format_count
    from nrmf.experiments import run_four_paths

    result = run_four_paths(spec)
    click.echo(f"uncompressed accuracy {result.baseline_accuracy!r}")
    for r in result.paths:
        click.echo(
            f"path {r.path}: {r.rank_method} ranks, {r.init_method} init, "
            f"conv params {format_count(r.report.total_compressed)}, accuracy {r.report.accuracy_after!r}"
        )


@main.command()
@click.option("--out-dir", type=click.Path(path_type=Path), default=None)
@click.option("--file", "report_path", type=click.Path(path_type=Path), default=None, help="Report CSV (default <out-dir>/report.csv).")
def report(out_dir: Path | None, report_path: Path | None):
    """Print a compression or four-path report."""
    from nrmf.config import get_out_dir
    from nrmf.reports import FOUR_PATH_COLUMNS, format_report, read_compression_csv, read_csv_rows

    path = report_path or (out_dir or get_out_dir()) / "report.csv"
    if not path.exists():
        raise MissingOutputError(f"no report at {path}")
    rows = read_csv_rows(path)
    if rows and set(FOUR_PATH_COLUMNS) <= set(rows[0]):
        for row in rows:
            click.echo(" ".join(f"{key}={row[key]}" for key in FOUR_PATH_COLUMNS))
        return
    compression, total = read_compression_csv(path)
    for line in format_report(compression):
        click.echo(line)
    if total and (total["original"], total["compressed"]) != (compression.total_original, compression.total_compressed):
        raise ReportMismatchError(f"{path}: TOTAL row does not match the sum of the layer rows")


@main.command("fetch-mnist")
@click.option("--data-dir", type=click.Path(path_type=Path), default=None)
@click.option("--url", default=None, help="Base URL of the gzip IDX files.")
def fetch_mnist_cmd(data_dir: Path | None, url: str | None):
    """Download the MNIST IDX files."""
    from nrmf.datasets import fetch_mnist

    data_dir = data_dir or get_data_dir()
    if data_dir is None:
        raise ConfigError("no dataset directory: pass --data-dir or set NRMF_DATA_DIR")
    base_url = url or get_mnist_url()
    if not base_url.endswith("/"):
        base_url += "/"
    for path in fetch_mnist(data_dir, base_url):
        click.echo(f"wrote {path}")


@main.command()
@click.option("--out-dir", type=click.Path(path_type=Path), default=None)
@click.option("--host", default="0.0.0.0", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(out_dir: Path | None, host: str, port: int):
    """Serve an output directory read-only over HTTP."""
    from nrmf.main import run

    if out_dir is not None:
        os.environ["NRMF_OUT_DIR"] = str(out_dir.resolve())
    run(host=host, port=port)
