"""CLI for tnml.

This module provides the command-line interface for training and evaluating
MPS classifiers on MNIST, running the two-component toy experiments, the
generative KL scan, and inspecting stored models.
"""

from collections.abc import Callable
from pathlib import Path
from typing import Annotated, Any

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from .config import (
    GenerativeConfig,
    InspectConfig,
    MnistEvalConfig,
    MnistTrainConfig,
    TnmlSettings,
    ToyConfig,
    resolve_run_config,
)
from .data_pipeline import (
    bayes_boundary,
    build_mnist,
    sample_gaussian_pair,
    spiral_dataset,
    write_dataset_csv,
)
from .feature_maps import LocalFeatureMap
from .logging_config import configure_global_logger, log_error, log_exception, log_info
from .models import (
    EvalMetrics,
    FeatureMapKind,
    InitScheme,
    ModelSummary,
    SweepRecord,
    ToyMetrics,
    ToySolver,
    ToyTask,
)
from .mps_model import bond_spectra, frobenius_norm_mps, init_model, load, save
from .outputs import config_path_for, dumps_json, write_json, write_jsonl
from .sweep_trainer import evaluate_metrics, train
from .toy_lab import (
    boundary_cell_count,
    decision_grid,
    disagreement_area,
    kl_scan,
    overfitting_scan,
    predict_full,
    quadratic_cost_full,
    toy_feature_map,
    train_full_quadratic,
    write_grid_csv,
    write_kl_scan_csv,
)

# Console for rich output
console = Console()

# Exit codes
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def complete_map_kinds(incomplete: str) -> list[str]:
    """Provide shell completion for feature map names."""
    return [k.value for k in FeatureMapKind if k.value.startswith(incomplete.lower())]


def complete_toy_tasks(incomplete: str) -> list[str]:
    """Provide shell completion for toy task names."""
    return [t.value for t in ToyTask if t.value.startswith(incomplete.lower())]


def run_guarded(action: Callable[[], None]) -> None:
    """Run a command body, mapping failures to exit codes.

    Input and usage errors (ValueError, FileNotFoundError, BadParameter) exit
    with 2; runtime and numerical failures exit with 1.

    Raises:
        typer.Exit: On any handled failure.
    """
    try:
        action()
    except typer.Exit:
        raise
    except (ValueError, FileNotFoundError, typer.BadParameter) as e:
        message = e.format_message() if isinstance(e, typer.BadParameter) else str(e)
        console.print(f"[red]Error:[/red] {message}")
        log_error(f"Usage error: {message}")
        raise typer.Exit(EXIT_USAGE) from e
    except (RuntimeError, OSError) as e:
        console.print(f"[red]Error:[/red] {e}")
        log_exception(f"Runtime error: {e}")
        raise typer.Exit(EXIT_RUNTIME) from e


def parse_sizes(value: str | None) -> list[int] | None:
    """Parse a comma-separated list of sample sizes.

    Raises:
        typer.BadParameter: If an entry is not an integer.
    """
    if value is None:
        return None
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise typer.BadParameter(f"--sizes must be comma-separated integers, got {value!r}") from e


def metrics_table(title: str, metrics: EvalMetrics) -> Table:
    """Confusion matrix table with the error rate in the caption."""
    n = len(metrics.confusion_matrix)
    table = Table(
        title=title,
        caption=f"error {metrics.error_rate:.4%} "
        f"({metrics.misclassified_count}/{metrics.total} misclassified)",
    )
    table.add_column("true \\ pred", style="cyan")
    for label in range(n):
        table.add_column(str(label), justify="right")
    for label, row in enumerate(metrics.confusion_matrix):
        cells = [
            f"[green]{v}[/green]" if k == label else (str(v) if v else "[dim]0[/dim]")
            for k, v in enumerate(row)
        ]
        table.add_row(str(label), *cells)
    return table


# =============================================================================
# Main Application
# =============================================================================

app = typer.Typer(
    name="tnml",
    help="Train matrix product state classifiers with two-site sweeps.",
    no_args_is_help=True,
    rich_markup_mode="rich",
)


@app.callback()
def main_callback(
    log_file: Annotated[
        Path | None,
        typer.Option(
            "--log-file",
            "-L",
            help="Log file path. When set, logs are written to file only (not stdout).",
            envvar="TNML_LOG_FILE",
        ),
    ] = None,
    log_level: Annotated[
        str,
        typer.Option(
            "--log-level",
            help="Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL).",
            envvar="TNML_LOG_LEVEL",
        ),
    ] = "INFO",
) -> None:
    """Configure global options for logging.

    Logs are written only to the specified file, not to stdout. DEBUG adds
    one line per bond visit.
    """
    if log_file:
        configure_global_logger(log_file=log_file, log_level=log_level)
        log_info(f"tnml started with log level {log_level}")


ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", "-c", help="config.yaml with per-command defaults"),
]
OutOption = Annotated[
    Path | None,
    typer.Option("--out", "-o", help="Output directory"),
]
SeedOption = Annotated[int | None, typer.Option("--seed", help="Random seed")]


# =============================================================================
# MNIST Commands
# =============================================================================


def _print_sweep(record: SweepRecord) -> None:
    console.print(
        f"  sweep {record.sweep}: cost={record.cost:.6g} "
        f"train error={record.train_error:.4%} "
        f"max bond={max(record.bond_dims, default=1)} ({record.seconds:.1f}s)"
    )


@app.command("mnist-train")
def mnist_train(
    data_dir: Annotated[
        Path | None,
        typer.Option("--data-dir", help="Directory with the MNIST IDX files (or TNML_DATA_DIR)"),
    ] = None,
    test_dir: Annotated[
        Path | None,
        typer.Option("--test-dir", help="Directory with the test IDX files"),
    ] = None,
    out: OutOption = None,
    map_kind: Annotated[
        FeatureMapKind | None,
        typer.Option("--map", help="Local feature map", autocompletion=complete_map_kinds),
    ] = None,
    d: Annotated[int | None, typer.Option("--d", help="Local dimension")] = None,
    m: Annotated[int | None, typer.Option("--m", help="Maximum bond dimension")] = None,
    m0: Annotated[int | None, typer.Option("--m0", help="Initial bond dimension")] = None,
    init: Annotated[
        InitScheme | None, typer.Option("--init", help="Initialization scheme")
    ] = None,
    alpha: Annotated[float | None, typer.Option("--alpha", help="Learning rate")] = None,
    sweeps: Annotated[int | None, typer.Option("--sweeps", help="Number of sweeps")] = None,
    cutoff: Annotated[
        float | None, typer.Option("--cutoff", help="Relative singular value cutoff")
    ] = None,
    steps_per_bond: Annotated[
        int | None, typer.Option("--steps-per-bond", help="Gradient steps per bond")
    ] = None,
    backtracking: Annotated[
        bool | None,
        typer.Option("--backtracking/--no-backtracking", help="Halve steps that raise the cost"),
    ] = None,
    subset: Annotated[
        int | None, typer.Option("--subset", help="Stratified training subset size")
    ] = None,
    test_subset: Annotated[
        int | None, typer.Option("--test-subset", help="Stratified test subset size")
    ] = None,
    seed: SeedOption = None,
    threads: Annotated[int | None, typer.Option("--threads", help="Worker threads")] = None,
    deterministic: Annotated[
        bool | None,
        typer.Option("--deterministic/--fast", help="Fixed reduction order"),
    ] = None,
    config_file: ConfigOption = None,
) -> None:
    """Train an MPS classifier on MNIST.

    Writes model.mpsc, sweeps.jsonl, bonds.jsonl, metrics.json and
    config.json to the output directory once training has finished.
    """

    def _train() -> None:
        settings = TnmlSettings.from_env()
        cfg = resolve_run_config(
            "mnist_train",
            {
                "data_dir": data_dir,
                "test_dir": test_dir,
                "out": out,
                "map_kind": map_kind,
                "d": d,
                "m": m,
                "m0": m0,
                "init": init,
                "learning_rate": alpha,
                "sweeps": sweeps,
                "cutoff": cutoff,
                "steps_per_bond": steps_per_bond,
                "backtracking": backtracking,
                "subset": subset,
                "test_subset": test_subset,
                "seed": seed,
                "threads": threads,
                "deterministic": deterministic,
            },
            MnistTrainConfig,
            config_file or settings.config_file,
            defaults={
                "data_dir": settings.data_dir,
                "threads": settings.threads,
                "out": settings.output_dir / "mnist",
            },
        )
        if cfg.data_dir is None:
            raise typer.BadParameter("no data directory: pass --data-dir or set TNML_DATA_DIR")

        train_set = build_mnist(cfg.data_dir, "train", cfg.subset, cfg.seed)
        test_set = (
            build_mnist(cfg.test_dir, "test", cfg.test_subset, cfg.seed) if cfg.test_dir else None
        )
        fmap = LocalFeatureMap(kind=cfg.map_kind, d=cfg.d)
        encoded = train_set.encode(fmap)
        model = init_model(
            cfg.init,
            train_set.n_features,
            cfg.d,
            train_set.n_labels,
            cfg.m0 or cfg.m,
            cfg.seed,
            cfg.map_kind,
            cfg.init_std,
        )

        console.print(
            f"[bold]Training[/bold] on {train_set.n_examples} images "
            f"(N={train_set.n_features}, d={cfg.d}, m={cfg.m}, {cfg.sweeps} sweeps)"
        )
        model, report = train(model, encoded, cfg.train_config(), on_sweep=_print_sweep)

        metrics = {"train": evaluate_metrics(model, encoded)}
        if test_set is not None:
            metrics["test"] = evaluate_metrics(model, test_set.encode(fmap))

        save(model, cfg.out / "model.mpsc")
        write_jsonl(cfg.out / "sweeps.jsonl", report.sweeps)
        write_jsonl(cfg.out / "bonds.jsonl", report.bonds)
        write_json(
            cfg.out / "metrics.json",
            {split: value.model_dump(mode="json") for split, value in metrics.items()},
        )
        write_json(cfg.out / "config.json", cfg)

        for split, value in metrics.items():
            console.print(f"[bold]{split} error:[/bold] {value.error_rate:.4%}")
        console.print(f"[green]Wrote[/green] {cfg.out}")

    run_guarded(_train)


@app.command("mnist-eval")
def mnist_eval(
    model_path: Annotated[Path, typer.Argument(help="Model file (.mpsc)")],
    data_dir: Annotated[
        Path | None,
        typer.Option("--data-dir", help="Directory with the MNIST IDX files (or TNML_DATA_DIR)"),
    ] = None,
    split: Annotated[str | None, typer.Option("--split", help="train or test")] = None,
    subset: Annotated[int | None, typer.Option("--subset", help="Stratified subset size")] = None,
    seed: SeedOption = None,
    map_kind: Annotated[
        FeatureMapKind | None,
        typer.Option(
            "--map", help="Expected feature map of the model", autocompletion=complete_map_kinds
        ),
    ] = None,
    d: Annotated[int | None, typer.Option("--d", help="Expected local dimension")] = None,
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Metrics JSON file")] = None,
    config_file: ConfigOption = None,
) -> None:
    """Evaluate a stored model on an MNIST split.

    Refuses to run when --map or --d disagree with the stored model. With
    --out the resolved settings are also written next to the metrics as
    <stem>.config.json.
    """

    def _eval() -> None:
        settings = TnmlSettings.from_env()
        cfg = resolve_run_config(
            "mnist_eval",
            {
                "model": model_path,
                "data_dir": data_dir,
                "split": split,
                "subset": subset,
                "seed": seed,
                "map_kind": map_kind,
                "d": d,
                "out": out,
            },
            MnistEvalConfig,
            config_file or settings.config_file,
            defaults={"data_dir": settings.data_dir},
        )
        model = load(cfg.model)
        if cfg.map_kind is not None and cfg.map_kind != model.map_kind:
            raise ValueError(
                f"model uses the {model.map_kind.value} map, not {cfg.map_kind.value}"
            )
        if cfg.d is not None and cfg.d != model.d:
            raise ValueError(f"model has local dimension {model.d}, not {cfg.d}")
        if cfg.data_dir is None:
            raise typer.BadParameter("no data directory: pass --data-dir or set TNML_DATA_DIR")

        dataset = build_mnist(cfg.data_dir, cfg.split, cfg.subset, cfg.seed)
        if dataset.n_features != model.n_sites:
            raise ValueError(
                f"model has {model.n_sites} sites but images have {dataset.n_features} pixels"
            )
        metrics = evaluate_metrics(
            model, dataset.encode(LocalFeatureMap(kind=model.map_kind, d=model.d))
        )
        if cfg.out is not None:
            write_json(cfg.out, metrics)
            write_json(config_path_for(cfg.out), cfg)

        console.print(metrics_table(f"MNIST {cfg.split}", metrics))
        console.print_json(dumps_json(metrics))

    run_guarded(_eval)


# =============================================================================
# Toy Experiments
# =============================================================================


@app.command("toy")
def toy(
    task: Annotated[
        ToyTask | None,
        typer.Option("--task", help="gaussians or spiral", autocompletion=complete_toy_tasks),
    ] = None,
    d: Annotated[int | None, typer.Option("--d", help="Local dimension (>= 2)")] = None,
    n: Annotated[int | None, typer.Option("--n", help="Total training points")] = None,
    grid: Annotated[int | None, typer.Option("--grid", help="Decision grid resolution")] = None,
    iters: Annotated[int | None, typer.Option("--iters", help="Gradient steps")] = None,
    rate: Annotated[
        float | None, typer.Option("--rate", help="Step size in units of 1/lambda_max")
    ] = None,
    solver: Annotated[
        ToySolver | None,
        typer.Option("--solver", help="gradient or exact (default: exact for spiral)"),
    ] = None,
    seed: SeedOption = None,
    scan_seeds: Annotated[
        int | None,
        typer.Option("--scan-seeds", help="Also compare d=2 and --d over this many seeds"),
    ] = None,
    out: OutOption = None,
    config_file: ConfigOption = None,
) -> None:
    """Train a full-tensor classifier on a two-component toy set.

    Writes grid.csv, points.csv, metrics.json and config.json; with
    --scan-seeds on the gaussians task, also overfitting.json.
    """

    def _toy() -> None:
        settings = TnmlSettings.from_env()
        cfg = resolve_run_config(
            "toy",
            {
                "task": task,
                "d": d,
                "n": n,
                "grid": grid,
                "iters": iters,
                "rate": rate,
                "solver": solver,
                "seed": seed,
                "scan_seeds": scan_seeds,
                "out": out,
            },
            ToyConfig,
            config_file or settings.config_file,
            defaults={"out": settings.output_dir / "toy"},
        )
        fmap = toy_feature_map(cfg.d)
        gaussians = cfg.gaussians.model_copy(update={"n_per_class": cfg.n_per_class})
        if cfg.task == ToyTask.GAUSSIANS:
            data = sample_gaussian_pair(gaussians, cfg.seed)
        else:
            data = spiral_dataset(cfg.n_per_class, cfg.seed, cfg.spiral)

        w = train_full_quadratic(
            data, cfg.d, cfg.iters, cfg.rate, cfg.seed, solver=cfg.resolved_solver
        )
        decisions = decision_grid(w, fmap, cfg.grid)
        accuracy = float(np.mean(predict_full(w, fmap, data.inputs) == data.labels))
        area = None
        if cfg.task == ToyTask.GAUSSIANS:
            area = disagreement_area(decisions.labels, bayes_boundary(gaussians, cfg.grid))
        metrics = ToyMetrics(
            task=cfg.task,
            d=cfg.d,
            n_points=data.n_examples,
            solver=cfg.resolved_solver,
            train_accuracy=accuracy,
            final_cost=quadratic_cost_full(w, fmap, data),
            grid=cfg.grid,
            boundary_cells=boundary_cell_count(decisions.labels),
            disagreement_area=area,
        )
        scan: dict[str, Any] | None = None
        if cfg.scan_seeds and cfg.task == ToyTask.GAUSSIANS:
            medians = overfitting_scan(
                gaussians,
                tuple(sorted({2, cfg.d})),
                tuple(range(cfg.scan_seeds)),
                cfg.iters,
                cfg.rate,
                cfg.grid,
                cfg.resolved_solver,
            )
            scan = {
                "seeds": cfg.scan_seeds,
                "median_disagreement": {str(k): v for k, v in medians.items()},
            }

        write_grid_csv(decisions, cfg.out / "grid.csv")
        write_dataset_csv(data, cfg.out / "points.csv")
        write_json(cfg.out / "metrics.json", metrics)
        if scan is not None:
            write_json(cfg.out / "overfitting.json", scan)
        write_json(cfg.out / "config.json", cfg)

        console.print(f"[bold]{cfg.task.value}[/bold] d={cfg.d}, {data.n_examples} points")
        console.print(f"  training accuracy: {accuracy:.2%}")
        if area is not None:
            console.print(f"  disagreement with Bayes boundary: {area:.4f}")
        if scan is not None:
            for k, v in scan["median_disagreement"].items():
                console.print(f"  median disagreement d={k}: {v:.4f}")
        console.print(f"[green]Wrote[/green] {cfg.out}")

    run_guarded(_toy)


@app.command("generative")
def generative(
    sizes: Annotated[
        str | None,
        typer.Option("--sizes", help="Comma-separated sample sizes, e.g. 20,100,500,2500"),
    ] = None,
    trials: Annotated[int | None, typer.Option("--trials", help="Trials per size")] = None,
    grid: Annotated[
        int | None, typer.Option("--grid", help="Sampling and quadrature resolution (>= 64)")
    ] = None,
    seed: SeedOption = None,
    iters: Annotated[int | None, typer.Option("--iters", help="Likelihood steps")] = None,
    rate: Annotated[float | None, typer.Option("--rate", help="Initial step size")] = None,
    threads: Annotated[int | None, typer.Option("--threads", help="Worker threads")] = None,
    out: OutOption = None,
    config_file: ConfigOption = None,
) -> None:
    """Relearn random Born-rule models from samples and scan KL vs sample size.

    Writes kl_scan.csv, fit.json and config.json.
    """

    def _generative() -> None:
        settings = TnmlSettings.from_env()
        cfg = resolve_run_config(
            "generative",
            {
                "sizes": parse_sizes(sizes),
                "trials": trials,
                "grid": grid,
                "seed": seed,
                "iters": iters,
                "rate": rate,
                "threads": threads,
                "out": out,
            },
            GenerativeConfig,
            config_file or settings.config_file,
            defaults={"threads": settings.threads, "out": settings.output_dir / "generative"},
        )
        result = kl_scan(
            cfg.sizes,
            cfg.trials,
            d=2,
            resolution=cfg.grid,
            seed=cfg.seed,
            iters=cfg.iters,
            rate=cfg.rate,
            threads=cfg.threads,
        )
        write_kl_scan_csv(result, cfg.out / "kl_scan.csv")
        write_json(cfg.out / "fit.json", result)
        write_json(cfg.out / "config.json", cfg)

        table = Table(title="KL divergence vs sample size")
        table.add_column("N_s", justify="right", style="cyan")
        table.add_column("mean KL", justify="right")
        table.add_column("std KL", justify="right", style="dim")
        for size, mean, std in zip(result.sizes, result.mean_kl, result.std_kl, strict=True):
            table.add_row(str(size), f"{mean:.5f}", f"{std:.5f}")
        console.print(table)
        console.print(
            f"[bold]fit:[/bold] sigma={result.sigma:.4f} (rms residual {result.residual:.2e})"
        )
        if result.exponent is not None:
            console.print(
                f"[bold]decay:[/bold] mean KL ~ {result.prefactor:.4g} * N_s^-{result.exponent:.3f}"
            )

    run_guarded(_generative)


# =============================================================================
# Model Inspection
# =============================================================================


@app.command("inspect")
def inspect_model(
    model_path: Annotated[Path, typer.Argument(help="Model file (.mpsc)")],
    as_json: Annotated[bool, typer.Option("--json", help="Print only the JSON summary")] = False,
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Summary JSON file")] = None,
) -> None:
    """Show the structure and bond spectra of a stored model.

    With --out the summary is written there and the resolved settings next
    to it as <stem>.config.json.
    """

    def _inspect() -> None:
        cfg = InspectConfig(model=model_path, as_json=as_json, out=out)
        model = load(cfg.model)
        spectra = bond_spectra(model)
        summary = ModelSummary(
            n_sites=model.n_sites,
            d=model.d,
            n_labels=model.n_labels,
            label_site=model.label_site,
            map_kind=model.map_kind,
            scalar_kind=model.scalar_kind,
            bond_dims=model.bond_dims,
            norm=frobenius_norm_mps(model),
            singular_values=[[float(s) for s in spectrum] for spectrum in spectra],
        )
        if cfg.out is not None:
            write_json(cfg.out, summary)
            write_json(config_path_for(cfg.out), cfg)
        if cfg.as_json:
            typer.echo(dumps_json(summary), nl=False)
            return

        console.print(
            f"[bold]{model_path.name}[/bold]: N={summary.n_sites}, d={summary.d}, "
            f"N_L={summary.n_labels}, label on site {summary.label_site}, "
            f"{summary.map_kind.value} map, {summary.scalar_kind.value}, "
            f"norm={summary.norm:.6g}"
        )
        table = Table(title="Bonds")
        table.add_column("Bond", justify="right", style="cyan")
        table.add_column("m", justify="right")
        table.add_column("s_max", justify="right")
        table.add_column("s_min", justify="right", style="dim")
        for j, (dim, spectrum) in enumerate(
            zip(summary.bond_dims, summary.singular_values, strict=True)
        ):
            table.add_row(
                str(j),
                str(dim),
                f"{spectrum[0]:.4e}" if spectrum else "-",
                f"{spectrum[-1]:.4e}" if spectrum else "-",
            )
        console.print(table)

    run_guarded(_inspect)


# =============================================================================
# Entry Point
# =============================================================================


def main() -> None:
    """Main entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
