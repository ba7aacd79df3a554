"""
Experiment pipelines: plain training, the regularized-vs-unregularized
spectrum experiment and the four-path compression comparison.

Everything an experiment writes goes under spec.out_dir:

    trajectories/<arm>/<layer>.csv   per-epoch Gram spectra
    ranks/<method>.csv               rank tables
    checkpoints/<name>/              network checkpoints
    compression/path_<x>.csv         per-path compression reports
    summary.json, report.csv
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from nrmf.compressor import SOURCE_FRESH, SOURCE_SWAP, CompressionReport, compress_network
from nrmf.config import ExperimentSpec
from nrmf.datasets import Dataset, load_mnist
from nrmf.engine.checkpoint import save_network
from nrmf.engine.network import Network
from nrmf.engine.training import evaluate, fit
from nrmf.errors import ConfigError
from nrmf.models import build_model
from nrmf.rank_selection import METHOD_NRMF, METHOD_VBMF, RankPair, select_ranks
from nrmf.regularizer import make_regularizer
from nrmf.reports import (
    PathResult,
    write_compression_csv,
    write_four_paths_csv,
    write_json,
    write_rank_csv,
    write_trajectory_csv,
)
from nrmf.trainer import SvTrajectory, TrainResult, default_monitored, layer_kernel, train_nrmf
from nrmf.vbmf import vbmf_rank_pair

logger = logging.getLogger(__name__)

ARM_REGULARIZED = "regularized"
ARM_BASELINE = "baseline"

# (path, rank method, init method, source). "init" is the trained model the
# factors come from: NRMF init is the regularized model, VBMF init the plain one.
FOUR_PATHS = (
    ("a", METHOD_NRMF, METHOD_NRMF, SOURCE_FRESH),
    ("b", METHOD_NRMF, METHOD_VBMF, SOURCE_SWAP),
    ("c", METHOD_VBMF, METHOD_NRMF, SOURCE_SWAP),
    ("d", METHOD_VBMF, METHOD_VBMF, SOURCE_FRESH),
)


def load_datasets(spec: ExperimentSpec) -> tuple[Dataset, Dataset]:
    """Seeded train/test subsets from spec's dataset directory."""
    data_dir = spec.resolved_data_dir()
    train = load_mnist(data_dir, "train").subset(spec.train_samples, spec.train.seed)
    test = load_mnist(data_dir, "test").subset(spec.test_samples, spec.train.seed)
    return train, test


def rank_table(net: Network, method: str, p: float) -> dict[str, RankPair]:
    """Ranks for every regularized conv of net by NRMF energy threshold or VBMF."""
    table = {}
    for name in default_monitored(net):
        kernel = layer_kernel(net, name)
        if method.upper() == METHOD_VBMF:
            table[name] = vbmf_rank_pair(kernel, layer=name)
        elif method.upper() == METHOD_NRMF:
            table[name] = select_ranks(kernel, p, layer=name)
        else:
            raise ConfigError(f"unknown rank method {method!r}")
    return table


def p_tag(p: float) -> str:
    """0.95 -> 'p0.95', 1.0 -> 'p1'."""
    return f"p{p:g}"


def write_trajectories(trajectories: dict[str, SvTrajectory], directory: Path) -> list[Path]:
    return [write_trajectory_csv(traj, Path(directory) / f"{name}.csv") for name, traj in sorted(trajectories.items())]


def train_model(spec: ExperimentSpec, train: Dataset, net: Network | None = None) -> TrainResult:
    """
    Train spec.model (or a warm-start net) with spec.train, then write its
    checkpoint, trajectories and NRMF rank table.
    """
    net = net if net is not None else build_model(spec.model, spec.train.seed)
    result = train_nrmf(net, spec.train, train.inputs(), train.targets(), list(spec.monitored) or None)
    out = Path(spec.out_dir)
    save_network(result.net, out / "checkpoints" / "trained")
    write_trajectories(result.trajectories, out / "trajectories")
    write_rank_csv(result.ranks.values(), out / "ranks" / f"nrmf_{p_tag(spec.p)}.csv")
    return result


def energy_trend(traj: SvTrajectory) -> dict:
    """Epoch-0 vs final total energy of both modes, plus whether the decrease is monotone after epoch 1."""
    energies = traj.energies()
    _, lam0, xi0 = energies[0]
    _, lam1, xi1 = energies[-1]
    lam_deltas = [b[1] - a[1] for a, b in zip(energies, energies[1:])]
    xi_deltas = [b[2] - a[2] for a, b in zip(energies, energies[1:])]

    def trend(first: float, last: float) -> str:
        if last < first:
            return "decreasing"
        if last > first:
            return "increasing"
        return "flat"

    return {
        "records": len(energies),
        "lambda_initial": lam0,
        "lambda_final": lam1,
        "lambda_trend": trend(lam0, lam1),
        "lambda_monotone_after_first": all(d <= 0 for d in lam_deltas[1:]),
        "xi_initial": xi0,
        "xi_final": xi1,
        "xi_trend": trend(xi0, xi1),
        "xi_monotone_after_first": all(d <= 0 for d in xi_deltas[1:]),
    }


@dataclass
class SvExperimentResult:
    trajectories: dict[str, dict[str, SvTrajectory]]
    summary: dict
    files: list[Path]


def run_sv_experiment(spec: ExperimentSpec, train: Dataset | None = None) -> SvExperimentResult:
    """
    Train spec.model twice from the same seed, once with spec.train.alpha and
    once with alpha = 0, logging the Gram spectra of the monitored layers
    every epoch.
    """
    train = train if train is not None else load_datasets(spec)[0]
    x, y = train.inputs(), train.targets()
    out = Path(spec.out_dir)
    monitored = list(spec.monitored) or None
    trajectories: dict[str, dict[str, SvTrajectory]] = {}
    files: list[Path] = []
    for arm, alpha in ((ARM_REGULARIZED, spec.train.alpha), (ARM_BASELINE, 0.0)):
        logger.info("sv-experiment arm %s (alpha=%g)", arm, alpha)
        net = build_model(spec.model, spec.train.seed)
        result = train_nrmf(net, replace(spec.train, alpha=alpha), x, y, monitored)
        trajectories[arm] = result.trajectories
        files.extend(write_trajectories(result.trajectories, out / "trajectories" / arm))

    layers = sorted(trajectories[ARM_REGULARIZED])
    summary = {
        "model": spec.model,
        "alpha": spec.train.alpha,
        "seed": spec.train.seed,
        "epochs": spec.train.epochs,
        "train_samples": len(train),
        "layers": {
            name: {arm: energy_trend(trajectories[arm][name]) for arm in (ARM_REGULARIZED, ARM_BASELINE)}
            for name in layers
        },
    }
    files.append(write_json(summary, out / "summary.json"))
    return SvExperimentResult(trajectories=trajectories, summary=summary, files=files)


def fine_tune(net: Network, spec: ExperimentSpec, train: Dataset, test: Dataset) -> tuple[float, float]:
    """Fine-tune net in place without the regularizer; returns (accuracy before, accuracy after) on test."""
    before, _ = evaluate(net, test.inputs(), test.targets())
    fit(net, spec.finetune_config(), train.inputs(), train.targets())
    after, _ = evaluate(net, test.inputs(), test.targets())
    logger.info("fine-tune: accuracy %.4f -> %.4f", before, after)
    return before, after


@dataclass
class FourPathResult:
    paths: list[PathResult]
    baseline_accuracy: float
    ranks: dict[str, dict[str, RankPair]]


def init_ranks_method(table: dict[str, RankPair]) -> str:
    methods = {pair.method for pair in table.values()}
    return methods.pop() if len(methods) == 1 else ""


def _compress_path(
    init_net: Network,
    init_ranks: dict[str, RankPair],
    target_ranks: dict[str, RankPair],
    rank_method: str,
    source: str,
) -> tuple[Network, CompressionReport]:
    if source == SOURCE_FRESH:
        return compress_network(init_net, target_ranks, SOURCE_FRESH, method=rank_method)
    factored, _ = compress_network(init_net, init_ranks, SOURCE_FRESH, method=init_ranks_method(init_ranks))
    return compress_network(factored, target_ranks, SOURCE_SWAP, method=rank_method)


def run_four_paths(
    spec: ExperimentSpec,
    train: Dataset | None = None,
    test: Dataset | None = None,
    rank_tables: dict[str, dict[str, RankPair]] | None = None,
) -> FourPathResult:
    """
    {NRMF, VBMF} ranks x {NRMF, VBMF} initialization.

    The NRMF init is spec.model trained with alpha; the VBMF init is the same
    model trained with alpha = 0. NRMF ranks come from the regularized model
    at threshold p, VBMF ranks from EVBMF on the plain model. Paths a and d
    factorize their init at the path's ranks; b and c factorize at the init's
    own ranks and then swap to the other method's ranks. Every path is
    fine-tuned for spec.finetune_epochs. rank_tables ({"NRMF": ..., "VBMF": ...})
    replaces the computed tables, e.g. full ranks for a sanity run.
    """
    if train is None or test is None:
        train, test = load_datasets(spec)
    x, y = train.inputs(), train.targets()
    out = Path(spec.out_dir)

    inits: dict[str, Network] = {}
    for method, alpha in ((METHOD_NRMF, spec.train.alpha), (METHOD_VBMF, 0.0)):
        logger.info("four-paths: training %s init (alpha=%g)", method, alpha)
        net = build_model(spec.model, spec.train.seed)
        fit(net, replace(spec.train, alpha=alpha), x, y, regularizer=make_regularizer(spec.train.penalty))
        save_network(net, out / "checkpoints" / method.lower())
        inits[method] = net

    baseline_accuracy, _ = evaluate(inits[METHOD_VBMF], test.inputs(), test.targets())
    if rank_tables is None:
        rank_tables = {
            METHOD_NRMF: rank_table(inits[METHOD_NRMF], METHOD_NRMF, spec.p),
            METHOD_VBMF: rank_table(inits[METHOD_VBMF], METHOD_VBMF, spec.p),
        }
    for method, table in rank_tables.items():
        write_rank_csv(table.values(), out / "ranks" / f"{method.lower()}.csv")

    results = []
    for path, rank_method, init_method, source in FOUR_PATHS:
        logger.info("four-paths: path %s (%s ranks, %s init, %s)", path, rank_method, init_method, source)
        net, report = _compress_path(
            inits[init_method], rank_tables[init_method], rank_tables[rank_method], rank_method, source
        )
        report.label = f"path_{path}"
        report.rank_method = rank_method
        report.init_method = init_method
        report.accuracy_before, report.accuracy_after = fine_tune(net, spec, train, test)
        save_network(net, out / "checkpoints" / f"path_{path}")
        write_compression_csv(report, out / "compression" / f"path_{path}.csv")
        results.append(
            PathResult(
                path=path,
                rank_method=rank_method,
                init_method=init_method,
                source=source,
                report=report,
                baseline_accuracy=baseline_accuracy,
            )
        )
    write_four_paths_csv(results, out / "report.csv")
    return FourPathResult(paths=results, baseline_accuracy=baseline_accuracy, ranks=rank_tables)
