"""
H2SGNN CLI

Command-line interface for homophily analysis, training, evaluation and the
polynomial oracle. Results go to stdout (or --out); logs and status go to stderr.
"""

import csv
import functools
import io
import json
import logging
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import List, Optional, Sequence

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import click
import numpy as np
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from src import __version__
from src.dataio import ExperimentConfig, load_config, load_dataset, write_dataset
from src.errors import ConfigError, H2SGNNError, ShapeError
from src.filters import frequency_response
from src.hetgraph import default_metapaths, homophily_table, resolve_metapath
from src.model import GraphContext, ModelVariant
from src.oracle import ParamVariant, efficiency_table, random_operators, verify_global_expansion
from src.storage import RunStorage, load_checkpoint
from src.synthetic import generate_synthetic_dataset
from src.train import TrainReport, aggregate_reports, evaluate
from src.train import train as train_model

console = Console(stderr=True)


def _setup_logging(verbose: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def common_options(func):
    """--out and --seed, shared by every command"""
    func = click.option("--seed", type=int, default=None, help="Random seed (default 0)")(func)
    func = click.option(
        "--out", "-o", type=click.Path(), default=None, help="Write the result here instead of stdout"
    )(func)
    return func


def reports_errors(func):
    """Turn library errors into a clean message and exit code 1"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (H2SGNNError, FileNotFoundError) as e:
            raise click.ClickException(str(e)) from e
    return wrapper


def _emit_json(payload, out: Optional[str]) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n")
        console.print(f"[green]✅ Wrote {out}[/green]")
    else:
        click.echo(text)


def _emit_csv(header: Sequence[str], rows: List[Sequence], out: Optional[str]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if out:
        Path(out).write_text(buffer.getvalue())
        console.print(f"[green]✅ Wrote {out}[/green]")
    else:
        click.echo(buffer.getvalue(), nl=False)


@click.group()
@click.option("--verbose", "-v", count=True, help="-v for INFO, -vv for DEBUG logging")
@click.version_option(version=__version__)
def cli(verbose):
    """🕸️ H2SGNN - spectral GNN for heterogeneous, heterophilic graphs"""
    load_dotenv()
    _setup_logging(verbose)


@cli.command()
@click.argument("dataset", type=click.Path())
@click.option("--metapath", "-m", "metapaths", multiple=True, help="Meta-path, e.g. PAP or 'NAME:rel1>rel2'")
@click.option("--binarize/--no-binarize", default=False, show_default=True, help="Replace path counts with 1")
@click.option("--drop-selfloops/--keep-selfloops", default=True, show_default=True)
@click.option("--row-normalize", is_flag=True, help="L1-normalize feature rows while loading")
@common_options
@reports_errors
def homophily(dataset, metapaths, binarize, drop_selfloops, row_normalize, out, seed):
    """Edge homophily (percent) of each meta-path subgraph"""
    bundle = load_dataset(dataset, row_normalize=row_normalize)
    graph = bundle.graph
    paths = [resolve_metapath(graph, token) for token in metapaths] or default_metapaths(graph)
    table = homophily_table(graph, paths, binarize=binarize, drop_selfloops=drop_selfloops)
    _emit_csv(["metapath", "homophily"], [[name, f"{100 * h:.2f}"] for name, h in table], out)


def _run_seed(config: ExperimentConfig, seed: int) -> TrainReport:
    """One seed: load, train, persist report and checkpoint"""
    bundle = load_dataset(config.dataset, row_normalize=config.row_normalize)
    paths = config.resolve_metapaths(bundle.graph)
    report, model = train_model(
        bundle,
        paths,
        config.model_for(paths),
        config.train,
        seed=seed,
        binarize=config.binarize,
        drop_selfloops=config.drop_selfloops,
    )
    storage = RunStorage(config.output_dir)
    storage.save_report(report)
    storage.save_checkpoint(
        model, paths, seed, binarize=config.binarize, drop_selfloops=config.drop_selfloops
    )
    return report


@cli.command("train")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Path(), help="Dataset directory (overrides the config)")
@click.option("--order", "-k", type=click.IntRange(min=0), help="Override the filter order K")
@click.option("--variant", type=click.Choice([v.value for v in ModelVariant]), help="Ablation variant")
@click.option("--epochs", type=click.IntRange(min=1), help="Override the number of epochs")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Parallel seed processes")
@common_options
@reports_errors
def train_cmd(config_path, dataset, order, variant, epochs, workers, out, seed):
    """Train one model per seed; --out is the run directory, --seed replaces the seed list"""
    config = load_config(config_path, dataset=dataset)
    if not config.dataset:
        raise ConfigError("no dataset: set 'dataset' in the config or pass --dataset")

    model_updates = {}
    if order is not None:
        model_updates["order"] = order
    if variant is not None:
        model_updates["variant"] = ModelVariant(variant)
    updates = {"model": config.model.model_copy(update=model_updates)}
    if epochs is not None:
        updates["train"] = config.train.model_copy(update={"epochs": epochs})
    if seed is not None:
        updates["seeds"] = [seed]
    if out:
        updates["output_dir"] = out
    config = config.model_copy(update=updates)

    console.print(
        f"\n🧠 [bold cyan]Training {config.model.variant.value} on {config.dataset}[/bold cyan] "
        f"(seeds {config.seeds})\n"
    )
    reports, failures = [], []
    if workers > 1 and len(config.seeds) > 1:
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=context) as pool:
            futures = {pool.submit(_run_seed, config, s): s for s in config.seeds}
            for future in as_completed(futures):
                try:
                    reports.append(future.result())
                except Exception as e:
                    failures.append((futures[future], str(e)))
    else:
        for s in config.seeds:
            try:
                reports.append(_run_seed(config, s))
            except Exception as e:
                failures.append((s, str(e)))

    for s, message in failures:
        console.print(f"[red]❌ Seed {s} failed: {message}[/red]")
    if not reports:
        raise click.ClickException("every run failed")

    reports.sort(key=lambda r: r.seed)
    storage = RunStorage(config.output_dir)
    for report in reports:
        storage.append_history(report, dataset=str(config.dataset))
    aggregate = aggregate_reports(reports)
    storage.save_aggregate(aggregate)

    table = Table(title="Test results")
    table.add_column("Seed", style="cyan")
    table.add_column("Best epoch", justify="right")
    table.add_column("Micro-F1", style="green", justify="right")
    table.add_column("Macro-F1", style="green", justify="right")
    for report in reports:
        table.add_row(
            str(report.seed),
            str(report.best_epoch),
            f"{100 * report.test_micro_f1:.2f}",
            f"{100 * report.test_macro_f1:.2f}",
        )
    console.print(table)
    console.print(
        f"\n[bold green]✅ Micro-F1 {100 * aggregate.micro_f1_mean:.2f} ± {100 * aggregate.micro_f1_stderr:.2f}, "
        f"Macro-F1 {100 * aggregate.macro_f1_mean:.2f} ± {100 * aggregate.macro_f1_stderr:.2f}[/bold green]"
    )
    click.echo(json.dumps(aggregate.model_dump(mode="json"), indent=2))

    if failures:
        raise click.ClickException(f"{len(failures)} of {len(config.seeds)} runs failed")


@cli.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset", type=click.Path())
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test", show_default=True)
@click.option("--row-normalize", is_flag=True, help="L1-normalize feature rows while loading")
@common_options
@reports_errors
def eval_cmd(checkpoint, dataset, split, row_normalize, out, seed):
    """Micro/Macro-F1 of a checkpoint on one split"""
    model, ckpt = load_checkpoint(checkpoint)
    bundle = load_dataset(dataset, row_normalize=row_normalize)
    graph = bundle.graph
    if graph.num_classes != model.num_classes:
        raise ShapeError(f"checkpoint predicts {model.num_classes} classes, dataset has {graph.num_classes}")
    context = GraphContext.from_graph(
        graph,
        ckpt.metapaths,
        binarize=ckpt.binarize,
        drop_selfloops=ckpt.drop_selfloops,
        materialize_global=ckpt.config.materialize_global,
    )
    mask = getattr(bundle.masks, split)
    micro, macro = evaluate(model, context, graph.labels, mask)
    _emit_json(
        {"dataset": bundle.metadata.name, "split": split, "nodes": len(mask), "micro_f1": micro, "macro_f1": macro},
        out,
    )


@cli.command("filter-response")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--samples", type=click.IntRange(min=1), default=101, show_default=True, help="Evenly spaced lambdas in [0, 2]")
@click.option("--unit-coefficients", is_flag=True, help="Debug: replace learned coefficients with (1, 0, ..., 0)")
@common_options
@reports_errors
def filter_response(checkpoint, samples, unit_coefficients, out, seed):
    """Frequency response of every local filter and the global filter"""
    model, ckpt = load_checkpoint(checkpoint)
    coeffs = model.coefficients()
    lambdas = np.linspace(0.0, 2.0, samples)
    unit = [1.0] + [0.0] * model.config.order

    filters = [
        (path.name, basis, unit if unit_coefficients else coeffs["alpha"][i])
        for i, (path, basis) in enumerate(zip(ckpt.metapaths, model.local_bases))
    ]
    filters.append(("global", model.config.global_basis, unit if unit_coefficients else coeffs["gamma"]))

    rows = []
    for name, basis, c in filters:
        rows.extend([name, lam, h] for lam, h in frequency_response(basis, c, lambdas))
    _emit_csv(["metapath", "lambda", "response"], rows, out)


@cli.command("count-params")
@click.option(
    "--variant",
    type=click.Choice([v.value for v in ParamVariant] + ["all"]),
    default="all",
    show_default=True,
)
@click.option("--relations", "-r", "num_relations", type=click.IntRange(min=1), required=True, help="R, number of meta-paths")
@click.option("--order", "-k", type=click.IntRange(min=0), default=None, help="K, polynomial order")
@click.option("--max-order", type=click.IntRange(min=0), default=None, help="Sweep K = 0..MAX_ORDER, one row per order")
@click.option("--nodes", type=click.IntRange(min=1), default=1000, show_default=True, help="Target nodes, for panel memory")
@click.option("--hidden", type=click.IntRange(min=1), default=64, show_default=True, help="Hidden width, for panel memory")
@common_options
@reports_errors
def count_params_cmd(variant, num_relations, order, max_order, nodes, hidden, out, seed):
    """Filter parameters, propagated terms and panel memory per model family"""
    if (order is None) == (max_order is None):
        raise click.UsageError("give exactly one of --order and --max-order")
    variants = list(ParamVariant) if variant == "all" else [ParamVariant(variant)]
    orders = [order] if max_order is None else list(range(max_order + 1))
    rows = efficiency_table(variants, num_relations, orders, nodes, hidden)

    payload = {"R": num_relations, "nodes": nodes, "hidden": hidden}
    if max_order is None:
        payload["K"] = order
        payload["variants"] = [row.model_dump(exclude={"K"}) for row in rows]
    else:
        payload["orders"] = orders
        payload["rows"] = [row.model_dump() for row in rows]
    _emit_json(payload, out)


@cli.command("oracle-check")
@click.option("--relations", "-r", "num_relations", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--order", "-k", type=click.IntRange(min=0), default=4, show_default=True)
@click.option("--seeds", type=click.IntRange(min=1), default=5, show_default=True, help="Random instances, starting at --seed")
@click.option("--nodes", type=click.IntRange(min=1), default=6, show_default=True)
@click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=1e-8, show_default=True)
@common_options
@reports_errors
def oracle_check(num_relations, order, seeds, nodes, tol, out, seed):
    """Check that powers of the weighted global operator expand into all words"""
    base = seed or 0
    worst = {k: 0.0 for k in range(order + 1)}
    for s in range(base, base + seeds):
        beta = np.random.default_rng(s).uniform(-1.0, 1.0, num_relations).tolist()
        report = verify_global_expansion(
            random_operators(num_relations, nodes, seed=s), beta, order, trials=2, tol=tol, seed=s
        )
        for k, err in report.orders.items():
            worst[k] = max(worst[k], err)

    passed = all(err <= tol for err in worst.values())
    _emit_json(
        {
            "R": num_relations,
            "K": order,
            "seeds": list(range(base, base + seeds)),
            "tolerance": tol,
            "passed": passed,
            "orders": {str(k): err for k, err in worst.items()},
        },
        out,
    )
    if not passed:
        raise click.ClickException("expansion check failed")


@cli.command("make-fixture")
@click.option("--nodes", type=click.IntRange(min=2), default=200, show_default=True)
@click.option("--classes", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--features", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0), default=1.0, show_default=True)
@common_options
@reports_errors
def make_fixture(nodes, classes, features, noise, out, seed):
    """Write a synthetic item/group/link dataset to --out"""
    if not out:
        raise click.UsageError("make-fixture needs --out DIR")
    bundle = generate_synthetic_dataset(
        num_nodes=nodes,
        num_classes=classes,
        num_features=features,
        informative=min(4, features),
        noise=noise,
        seed=seed or 0,
    )
    write_dataset(bundle, out)
    console.print(f"[green]✅ Fixture written to {out}[/green]")
    click.echo(json.dumps(bundle.statistics().model_dump(), indent=2))


@cli.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--limit", type=click.IntRange(min=1), default=10, show_default=True, help="Number of entries to show")
@common_options
@reports_errors
def history(run_dir, limit, out, seed):
    """Show past training runs of a run directory; --out writes them as JSON"""
    entries = RunStorage(run_dir).get_history()
    if out:
        _emit_json({"entries": entries[-limit:]}, out)
        return

    console.print("\n📜 [bold cyan]Run History[/bold cyan]\n")
    if not entries:
        console.print("[yellow]No history yet.[/yellow]")
        return

    for entry in reversed(entries[-limit:]):
        panel = Panel(
            f"Seed {entry['seed']} · {entry['variant']} · best epoch {entry['best_epoch']}\n"
            f"Micro-F1 {100 * entry['test_micro_f1']:.2f}  Macro-F1 {100 * entry['test_macro_f1']:.2f}",
            title=f"{entry.get('dataset', '')} {entry['timestamp'][:19]}",
            border_style="cyan",
        )
        console.print(panel)


if __name__ == "__main__":
    cli()
