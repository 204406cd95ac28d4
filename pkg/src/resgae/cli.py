"""Command-line interface: ``resgae {info,train,sweep,verify}``.

Every option can also be set through an environment variable named
``RESGAE_<OPTION>`` (upper case, dashes as underscores), e.g.
``RESGAE_EPOCHS=50``.  Command-line flags take precedence.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click

from .graph import Graph, GraphFormatError, SplitError, load_citation_dataset, load_generic_graph, split_edges
from .models import ACTIVATIONS, KL_NORMS, EncoderConfig, ModelKind
from .tensor import NonFiniteError
from .train import Aggregate, NonFiniteLossError, RunResult, TrainConfig, aggregate, run_seed, train_single

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# node / edge / feature counts as published for the benchmark citation graphs
REFERENCE_STATS = {
    "cora": {"nodes": 2708, "edges": 5429, "features": 1433},
    "citeseer": {"nodes": 3327, "edges": 4732, "features": 3703},
    "pubmed": {"nodes": 19717, "edges": 44338, "features": 500},
}

LOSS_FLAGS = {"full": "full_matrix_weighted", "sampled": "balanced_sampled", "auto": "auto"}

CSV_COLUMNS = [
    "row", "dataset", "model", "layers", "degenerate", "activation", "loss", "kl_norm",
    "hidden", "latent", "epochs", "lr", "seed", "run", "auc", "ap", "auc_std", "ap_std",
]

log = logging.getLogger("resgae")


def _env(name: str) -> str:
    return "RESGAE_" + name.upper().replace("-", "_")


def option(*decls, **kw):
    name = decls[0].lstrip("-").split("/")[0]
    kw.setdefault("envvar", _env(name))
    kw.setdefault("show_envvar", True)
    return click.option(*decls, **kw)


def dataset_options(f):
    f = option("--unknown-ids", type=click.Choice(["skip", "add"]), default="skip",
               help="Citations naming ids missing from .content: skip them or add zero-feature nodes.")(f)
    f = option("--format", "fmt", type=click.Choice(["citation", "generic"]), default="citation",
               help="Input format.")(f)
    f = option("--dataset", required=True, type=click.Path(),
               help="Citation prefix/directory (X.content + X.cites) or generic graph file.")(f)
    return f


def model_options(f):
    for deco in reversed([
        option("--model", "models", default="all",
               help="gae, vgae, resgae, resvgae, a comma list, or all."),
        option("--layers", type=int, default=None, help="Number of graph convolutional layers."),
        option("--sweep", default=None, help="Layer range A..B (inclusive)."),
        option("--max-layers", type=int, default=8, help="Upper bound accepted for --layers/--sweep."),
        option("--hidden", type=int, default=32),
        option("--latent", type=int, default=16),
        option("--activation", type=click.Choice(ACTIVATIONS), default="sigmoid"),
        option("--epochs", type=int, default=200),
        option("--lr", type=float, default=0.01),
        option("--runs", type=int, default=10),
        option("--seed", type=int, default=0, help="Base seed; run r uses seed + r."),
        option("--loss", type=click.Choice(list(LOSS_FLAGS)), default="auto",
               help="full = weighted N^2 BCE, sampled = balanced negatives, auto picks by size."),
        option("--kl-norm", type=click.Choice(KL_NORMS), default="nodes_squared"),
        option("--row-normalize/--no-row-normalize", default=False, help="L1-normalise feature rows."),
        option("--out", type=click.Path(dir_okay=False), default=None, help="Results CSV path."),
        option("--jobs", type=int, default=1, help="Parallel worker processes."),
        option("--checkpoint-dir", type=click.Path(file_okay=False), default=None),
    ]):
        f = deco(f)
    return f


@dataclass(frozen=True)
class BenchConfig:
    dataset: str
    fmt: str
    models: tuple[ModelKind, ...]
    layers: tuple[int, ...]
    hidden: int
    latent: int
    activation: str
    train: TrainConfig
    row_normalize: bool
    unknown_ids: str
    out: str | None
    jobs: int
    checkpoint_dir: str | None

    @property
    def dataset_name(self) -> str:
        p = Path(self.dataset)
        return p.stem if p.suffix in (".content", ".cites", ".txt", ".graph") else p.name


def parse_models(text: str) -> tuple[ModelKind, ...]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise click.BadParameter("no model given", param_hint="--model")
    if "all" in (n.lower() for n in names):
        return tuple(ModelKind)
    try:
        kinds = [ModelKind.parse(n) for n in names]
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--model") from None
    return tuple(dict.fromkeys(kinds))


def parse_layers(layers: int | None, sweep: str | None, max_layers: int) -> tuple[int, ...]:
    if (layers is None) == (sweep is None):
        raise click.UsageError("give exactly one of --layers N or --sweep A..B")
    if sweep is not None:
        try:
            lo, hi = (int(v) for v in sweep.split(".."))
        except ValueError:
            raise click.BadParameter(f"expected A..B, got {sweep!r}", param_hint="--sweep") from None
    else:
        lo = hi = layers
    if not 1 <= lo <= hi <= max_layers:
        raise click.BadParameter(f"layer range must lie within 1..{max_layers}", param_hint="--layers/--sweep")
    return tuple(range(lo, hi + 1))


def build_config(dataset, fmt, unknown_ids, models, layers, sweep, max_layers, hidden, latent, activation,
                 epochs, lr, runs, seed, loss, kl_norm, row_normalize, out, jobs, checkpoint_dir) -> BenchConfig:
    for flag, value in (("--hidden", hidden), ("--latent", latent), ("--epochs", epochs),
                        ("--runs", runs), ("--jobs", jobs)):
        if value < 1:
            raise click.BadParameter("must be >= 1", param_hint=flag)
    if not lr > 0:
        raise click.BadParameter("must be positive", param_hint="--lr")
    train = TrainConfig(epochs=epochs, lr=lr, runs=runs, base_seed=seed, loss_mode=LOSS_FLAGS[loss], kl_norm=kl_norm)
    return BenchConfig(
        dataset=dataset, fmt=fmt, models=parse_models(models),
        layers=parse_layers(layers, sweep, max_layers), hidden=hidden, latent=latent,
        activation=activation, train=train, row_normalize=row_normalize, unknown_ids=unknown_ids,
        out=out, jobs=jobs, checkpoint_dir=checkpoint_dir,
    )


def citation_paths(dataset: str) -> tuple[Path, Path]:
    p = Path(dataset)
    if p.is_dir():
        contents = sorted(p.glob("*.content"))
        if len(contents) != 1:
            raise GraphFormatError(f"{p}: expected exactly one .content file, found {len(contents)}")
        base = contents[0].with_suffix("")
    else:
        base = p.with_suffix("") if p.suffix in (".content", ".cites") else p
    content, cites = base.with_suffix(".content"), base.with_suffix(".cites")
    for f in (content, cites):
        if not f.is_file():
            raise FileNotFoundError(f"missing dataset file {f}")
    return content, cites


def load_dataset(dataset: str, fmt: str, unknown_ids: str = "skip") -> Graph:
    if fmt == "generic":
        if not Path(dataset).is_file():
            raise FileNotFoundError(f"missing dataset file {dataset}")
        return load_generic_graph(dataset)
    return load_citation_dataset(*citation_paths(dataset), unknown=unknown_ids)


# ------------------------------------------------------------------ running


def _cell(args) -> tuple[int, int, RunResult]:
    g, enc_cfg, train_cfg, model_idx, run, ckpt = args
    seed = run_seed(train_cfg, run)
    res = train_single(g, split_edges(g, seed), enc_cfg, train_cfg, seed, run_index=run, checkpoint=ckpt)
    res.params = None
    return model_idx, enc_cfg.num_layers, res


def run_grid(cfg: BenchConfig, g: Graph) -> dict[tuple[ModelKind, int], list[RunResult]]:
    """Train every (model, layers, run) cell; results keyed by (model, layers), runs in order."""
    tasks = []
    for mi, kind in enumerate(cfg.models):
        for L in cfg.layers:
            enc = EncoderConfig(kind, L, g.num_features, cfg.hidden, cfg.latent, cfg.activation)
            for r in range(cfg.train.runs):
                ckpt = None
                if cfg.checkpoint_dir:
                    Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
                    ckpt = Path(cfg.checkpoint_dir) / f"{kind.value}_L{L}_run{r}.ckpt"
                tasks.append((g, enc, cfg.train, mi, r, ckpt))
    grid: dict[tuple[ModelKind, int], list[RunResult]] = {}
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            done = list(pool.map(_cell, tasks))
    else:
        done = []
        for t in tasks:
            done.append(_cell(t))
            mi, L, res = done[-1]
            log.info("%s L=%d run %d: auc %.4f ap %.4f (%.1fs)", cfg.models[mi].value, L,
                     res.run_index, res.final_test_auc, res.final_test_ap, res.duration)
    for mi, L, res in done:
        grid.setdefault((cfg.models[mi], L), []).append(res)
    for runs in grid.values():
        runs.sort(key=lambda r: r.run_index)
    return grid


def csv_rows(cfg: BenchConfig, g: Graph, grid) -> list[dict]:
    loss = cfg.train.resolved_loss(g.num_nodes)
    rows = []
    for kind in cfg.models:
        for L in cfg.layers:
            results = grid[(kind, L)]
            enc = EncoderConfig(kind, L, g.num_features, cfg.hidden, cfg.latent, cfg.activation)
            common = {
                "dataset": cfg.dataset_name, "model": kind.value, "layers": L,
                "degenerate": str(enc.degenerate).lower(), "activation": cfg.activation,
                "loss": loss, "kl_norm": cfg.train.kl_norm if kind.variational else "",
                "hidden": cfg.hidden, "latent": cfg.latent, "epochs": cfg.train.epochs,
                "lr": repr(cfg.train.lr),
            }
            for res in results:
                rows.append({**common, "row": "run", "seed": res.seed, "run": res.run_index,
                             "auc": repr(res.final_test_auc), "ap": repr(res.final_test_ap),
                             "auc_std": "", "ap_std": ""})
            agg = aggregate(results)
            rows.append({**common, "row": "aggregate", "seed": cfg.train.base_seed, "run": "",
                         "auc": repr(agg.auc_mean), "ap": repr(agg.ap_mean),
                         "auc_std": repr(agg.auc_std), "ap_std": repr(agg.ap_std)})
    return rows


def write_csv(rows: list[dict], path: str | None) -> None:
    if path is None:
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\r\n")
    w.writeheader()
    w.writerows(rows)
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def summarize(cfg: BenchConfig, grid) -> list[str]:
    lines = []
    for kind in cfg.models:
        for L in cfg.layers:
            agg: Aggregate = aggregate(grid[(kind, L)])
            enc = EncoderConfig(kind, L, 1, cfg.hidden, cfg.latent, cfg.activation)
            tag = " (degenerate: no residual module)" if enc.degenerate else ""
            lines.append(f"{kind.value:8s} L={L}: {agg.summary()}{tag}")
    return lines


# ----------------------------------------------------------------- commands


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="-v progress, -vv per-epoch detail.")
def cli(verbose):
    """Graph autoencoders (GAE, VGAE, ResGAE, ResVGAE) for link prediction."""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)


@cli.command("info")
@dataset_options
def cmd_info(dataset, fmt, unknown_ids):
    """Print node, edge, feature and component counts of a dataset."""
    g = load_dataset(dataset, fmt, unknown_ids)
    st = g.stats
    click.echo(f"nodes: {g.num_nodes}")
    click.echo(f"edges: {g.num_edges} (undirected, deduplicated, self-loops removed)")
    if st:
        click.echo(f"citation rows: {st['raw_citations']} raw, {st['directed_edges']} distinct directed, "
                   f"{st['skipped_unknown']} skipped (unknown id), {st['self_citations']} self-citations, "
                   f"{st['added_nodes']} nodes added for unknown ids")
    click.echo(f"features: {g.num_features}")
    click.echo(f"connected components: {g.num_components()}")
    name = Path(dataset).stem.lower() if not Path(dataset).is_dir() else Path(dataset).name.lower()
    ref = REFERENCE_STATS.get(name)
    if ref:
        ours = {"nodes": g.num_nodes, "edges": g.num_edges, "features": g.num_features}
        for key, expected in ref.items():
            if ours[key] == expected:
                click.echo(f"reference {key}: {expected} (match)")
            else:
                click.echo(f"reference {key}: {expected} DEVIATION: loaded {ours[key]} "
                           f"({ours[key] - expected:+d})")
    return EXIT_OK


def _bench(kwargs) -> tuple[BenchConfig, Graph, dict]:
    cfg = build_config(**kwargs)
    g = load_dataset(cfg.dataset, cfg.fmt, cfg.unknown_ids)
    if cfg.row_normalize:
        g = g.row_normalized()
    return cfg, g, run_grid(cfg, g)


@cli.command("train")
@dataset_options
@model_options
def cmd_train(**kwargs):
    """Train the chosen model(s) at one depth over several seeded runs."""
    if kwargs["sweep"] is not None:
        raise click.UsageError("train takes --layers; use the sweep command for ranges")
    if kwargs["layers"] is None:
        kwargs["layers"] = 2
    cfg, g, grid = _bench(kwargs)
    for line in summarize(cfg, grid):
        click.echo(line)
    write_csv(csv_rows(cfg, g, grid), cfg.out)
    return EXIT_OK


@cli.command("sweep")
@dataset_options
@model_options
def cmd_sweep(**kwargs):
    """Train every model over a range of depths; one CSV row per run plus aggregates."""
    if kwargs["sweep"] is None and kwargs["layers"] is None:
        kwargs["sweep"] = "1..8"
    cfg, g, grid = _bench(kwargs)
    for line in summarize(cfg, grid):
        click.echo(line)
    write_csv(csv_rows(cfg, g, grid), cfg.out)
    return EXIT_OK


@cli.command("verify")
@option("--quick/--full", default=False, help="Fewer random instances.")
def cmd_verify(quick):
    """Run the gradient, metric and normalisation self-checks."""
    from . import checks

    scale = 0.2 if quick else 1.0
    results = [
        checks.check_op_gradients(instances=max(1, int(4 * scale))),
        checks.check_composed_gradients(instances=max(1, int(5 * scale))),
        checks.check_metrics(instances=max(10, int(1000 * scale))),
        checks.check_normalization(instances=max(10, int(100 * scale))),
    ]
    for r in results:
        click.echo(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="resgae", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (GraphFormatError, SplitError, FileNotFoundError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except (NonFiniteLossError, NonFiniteError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERIC
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
