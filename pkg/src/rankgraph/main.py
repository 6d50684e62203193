"""
Command-line entry point for rankgraph.

What it does:
- One `rankgraph` command with a subcommand per pipeline stage: generate,
  ingest, semantic-edges, init, train, embed, retrieve, cluster, subgraph,
  export-tokens, eval-edge-recall, eval-engagement-recall, grad-check.
- Every subcommand takes `--seed`, `--config` and `--out`. Module seeds are
  derived from `--seed` by name, so one flag drives all randomness.
- Before any output is written, `<out>.manifest.json` records the subcommand,
  resolved config, input digests, seed, version and output paths; the same
  record is appended to `runs.jsonl` beside it.

Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

Where it is used:
- Console script `rankgraph` (pyproject), or `python -m rankgraph.main`.
"""
from __future__ import annotations

import datetime as _dt
import functools
import hashlib
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

import click

from . import __version__
from .config.loader import RankGraphConfig, derive_seed, load_config
from .errors import RankGraphError, ValidationError
from .graph.features import load_features
from .graph.schema import load_schema
from .graph.semantic import derive_semantic_edges
from .graph.store import ingest_edges, load_graph, load_ids, save_graph
from .logs.run_log import append_jsonl, log_event
from .metrics.core import start_server_safe

logger = logging.getLogger("rankgraph")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def _digest(path: str) -> str:
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, _, files in sorted(os.walk(path)):
            for name in sorted(files):
                full = os.path.join(root, name)
                h.update(os.path.relpath(full, path).encode("utf-8"))
                with open(full, "rb") as f:
                    h.update(f.read())
    else:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def manifest_path(out: str) -> str:
    return out.rstrip("/\\") + ".manifest.json"


def write_manifest(
    subcommand: str,
    cfg: RankGraphConfig,
    seed: int,
    out: str,
    inputs: Dict[str, Optional[str]],
    outputs: List[str],
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "kind": "manifest",
        "subcommand": subcommand,
        "config": cfg.model_dump(),
        "inputs": {
            name: {"path": p, "sha256": _digest(p)} for name, p in sorted(inputs.items()) if p is not None
        },
        "seed": seed,
        "version": __version__,
        "outputs": outputs,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        record.update(extra)
    path = manifest_path(out)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")
    append_jsonl(os.path.join(parent or ".", "runs.jsonl"), record)
    return record


def _write_json(path: str, payload: Dict[str, Any]) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def common_options(out_required: bool = True) -> Callable:
    def decorate(fn: Callable) -> Callable:
        @click.option("--seed", type=int, default=0, show_default=True, help="Run seed; module seeds derive from it.")
        @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="YAML/JSON config (default: $RANKGRAPH_CONFIG or config/rankgraph.yaml).")
        @click.option("--out", type=click.Path(), required=out_required, default=None, help="Primary output path.")
        @functools.wraps(fn)
        def wrapper(*args, config_path: Optional[str], **kwargs):
            kwargs["cfg"] = load_config(config_path)
            return fn(*args, **kwargs)
        return wrapper
    return decorate


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="rankgraph")
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--threads", type=int, default=1, show_default=True, help="Worker cap where parallelism is allowed.")
@click.option("--metrics-port", type=int, default=None, envvar="RANKGRAPH_METRICS_PORT",
              help="Expose Prometheus metrics on this port.")
@click.pass_context
def cli(ctx: click.Context, log_level: str, threads: int, metrics_port: Optional[int]) -> None:
    """Heterogeneous graph embeddings: ingest, train, serve, evaluate."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format=LOG_FORMAT)
    if threads < 1:
        raise click.BadParameter("must be >= 1", param_hint="--threads")
    if metrics_port:
        start_server_safe(metrics_port)
    ctx.obj = {"threads": threads}


@cli.command()
@common_options()
def generate(seed: int, out: str, cfg: RankGraphConfig) -> None:
    """Write a planted-partition dataset into directory OUT."""
    from .eval.synthetic import generate_synthetic, write_synthetic

    names = ["schema.json", "ids.tsv", "edges.tsv", "edges_next.tsv", "features", "interactions.tsv", "communities.tsv"]
    write_manifest("generate", cfg, seed, out, {}, [os.path.join(out, n) for n in names])
    ds = generate_synthetic(cfg.synthetic, derive_seed(seed, "synthetic"))
    paths = write_synthetic(ds, out)
    click.echo(f"wrote {len(ds.edges)} edges, {len(ds.edges_next)} next-period edges, "
               f"{len(ds.interactions)} interactions to {out}")
    logger.debug(f"generate outputs: {paths}")


@cli.command()
@common_options()
@click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--edges", "edges_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--ids-from", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Graph container or ids.tsv whose id dictionary seeds this one.")
def ingest(seed: int, out: str, cfg: RankGraphConfig, schema_path: str, edges_path: str, ids_from: Optional[str]) -> None:
    """Parse an edge TSV into a graph container."""
    write_manifest("ingest", cfg, seed, out, {"schema": schema_path, "edges": edges_path, "ids_from": ids_from}, [out])
    schema = load_schema(schema_path)
    ids = load_ids(ids_from, schema) if ids_from else None
    g = ingest_edges(edges_path, schema, ids)
    save_graph(g, out)
    click.echo(json.dumps(g.summary(), sort_keys=True))


def _default_via(g) -> str:
    for r in g.schema.trainable_relations():
        if r.kind == "engagement":
            return r.name
    raise ValidationError("graph has no engagement relation to project through")


@cli.command("semantic-edges")
@common_options()
@click.option("--graph", "graph_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--via", default=None, help="Relation whose shared endpoints connect source nodes.")
@click.option("--name", default=None, help="Name of the new semantic relation.")
@click.option("--top-k", type=int, default=None)
@click.option("--min-weight", type=float, default=None)
def semantic_edges(seed: int, out: str, cfg: RankGraphConfig, graph_path: str, via: Optional[str],
                   name: Optional[str], top_k: Optional[int], min_weight: Optional[float]) -> None:
    """Add a co-engagement relation over a relation's source type."""
    write_manifest("semantic-edges", cfg, seed, out, {"graph": graph_path}, [out])
    g = load_graph(graph_path)
    sem = cfg.semantic
    g2 = derive_semantic_edges(
        g,
        via or sem.via or _default_via(g),
        name or sem.name,
        top_k if top_k is not None else sem.top_k,
        min_weight if min_weight is not None else sem.min_weight,
    )
    save_graph(g2, out)
    click.echo(json.dumps(g2.summary(), sort_keys=True))


@cli.command()
@common_options()
@click.option("--graph", "graph_path", type=click.Path(exists=True, dir_okay=False), required=True)
def init(seed: int, out: str, cfg: RankGraphConfig, graph_path: str) -> None:
    """Write the seeded initial checkpoint."""
    from .model.params import init_params, save_checkpoint

    write_manifest("init", cfg, seed, out, {"graph": graph_path}, [out])
    g = load_graph(graph_path)
    save_checkpoint(init_params(g.schema, cfg.model, derive_seed(seed, "model")), out)


@cli.command()
@common_options()
@click.option("--graph", "graph_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--features", "features_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--steps", type=int, default=None, help="Override train.steps.")
@click.option("--init", "init_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Start from this checkpoint instead of the seeded init.")
def train(seed: int, out: str, cfg: RankGraphConfig, graph_path: str, features_dir: str,
          steps: Optional[int], init_path: Optional[str]) -> None:
    """Train and write the checkpoint plus `<out>.loss.tsv`."""
    from .model.params import load_checkpoint, save_checkpoint
    from .training.trainer import train as run_training, write_loss_log

    loss_path = f"{out}.loss.tsv"
    write_manifest("train", cfg, seed, out,
                   {"graph": graph_path, "features": features_dir, "init": init_path}, [out, loss_path],
                   {"steps": steps if steps is not None else cfg.train.steps})
    g = load_graph(graph_path)
    store = load_features(features_dir, g)
    params = load_checkpoint(init_path, g.schema) if init_path else None
    result = run_training(g, store, cfg, seed, steps, params)
    save_checkpoint(result.params, out)
    write_loss_log(result.history, loss_path)
    if result.history:
        click.echo(f"loss {result.initial_loss:.6f} -> {result.final_loss:.6f} over {len(result.history)} steps")
    else:
        click.echo("0 steps: checkpoint equals init")


@cli.command()
@common_options()
@click.option("--graph", "graph_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--features", "features_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--node-type", "node_types", multiple=True, help="Restrict to these node types.")
@click.option("--head", "heads", type=int, multiple=True, help="Restrict to these heads.")
def embed(seed: int, out: str, cfg: RankGraphConfig, graph_path: str, features_dir: str, ckpt_path: str,
          node_types: Sequence[str], heads: Sequence[int]) -> None:
    """Export `<type>.head<h>.rge` tables into directory OUT."""
    from .model.params import load_checkpoint
    from .serving.tables import export_tables, save_table

    g = load_graph(graph_path)
    params = load_checkpoint(ckpt_path, g.schema)
    types = list(node_types) or [t.name for t in g.schema.node_types]
    wanted = list(heads) or list(range(params.dims.num_heads))
    for h in wanted:
        if not 0 <= h < params.dims.num_heads:
            raise ValidationError(f"head {h} out of range [0, {params.dims.num_heads})")
    targets = [(g.type_name(t), h) for t in types for h in wanted]
    outputs = [os.path.join(out, f"{t}.head{h}.rge") for t, h in targets]
    write_manifest("embed", cfg, seed, out, {"graph": graph_path, "features": features_dir, "checkpoint": ckpt_path},
                   outputs)
    tables = export_tables(params, g, load_features(features_dir, g))
    for (t, h), path in zip(targets, outputs):
        save_table(tables[(t, h)], path)
    click.echo(f"wrote {len(outputs)} tables to {out}")


@cli.command()
@common_options(out_required=False)
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--id", "query_ids", multiple=True, required=True, help="Query external id (repeatable).")
@click.option("--k", type=int, default=10, show_default=True)
def retrieve(seed: int, out: Optional[str], cfg: RankGraphConfig, table_path: str,
             query_ids: Sequence[str], k: int) -> None:
    """Exact cosine kNN for the listed ids (TSV: query, rank, neighbor, score)."""
    from .serving.retrieval import knn
    from .serving.tables import load_table

    if out:
        write_manifest("retrieve", cfg, seed, out, {"table": table_path}, [out])
    table = load_table(table_path)
    lines = ["query\trank\tneighbor\tscore"]
    for q in query_ids:
        for rank, (nid, score) in enumerate(knn(table, q, k), start=1):
            lines.append(f"{q}\t{rank}\t{nid}\t{score!r}")
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    click.echo(text, nl=False)


@cli.command()
@common_options()
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--k", type=int, default=None, help="Override cluster.k.")
@click.option("--max-iters", type=int, default=None, help="Override cluster.max_iters.")
def cluster(seed: int, out: str, cfg: RankGraphConfig, table_path: str, k: Optional[int], max_iters: Optional[int]) -> None:
    """Spherical k-means; assignment TSV at OUT and summary at OUT.json."""
    from .serving.clustering import cluster as run_cluster, save_clusters
    from .serving.tables import load_table

    write_manifest("cluster", cfg, seed, out, {"table": table_path}, [out, f"{out}.json"])
    table = load_table(table_path)
    model = run_cluster(
        table,
        k if k is not None else cfg.cluster.k,
        max_iters if max_iters is not None else cfg.cluster.max_iters,
        derive_seed(seed, "cluster"),
    )
    save_clusters(model, table, out)
    click.echo(f"k={model.k} inertia={model.inertia:.6f} iterations={model.iterations}")


@cli.command()
@common_options()
@click.option("--graph", "graph_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--node-type", required=True, help="Endpoint type of the projected graph.")
@click.option("--via", required=True, help="Relation from --node-type to the shared type.")
@click.option("--name", default=None, help="Relation name in the output (default <type>_via_<via>).")
@click.option("--top-k", type=int, default=None)
@click.option("--min-weight", type=float, default=None)
def subgraph(seed: int, out: str, cfg: RankGraphConfig, graph_path: str, node_type: str, via: str,
             name: Optional[str], top_k: Optional[int], min_weight: Optional[float]) -> None:
    """Homogeneous co-engagement subgraph as an edge TSV (schema at OUT.schema.json)."""
    from .serving.projection import project_subgraph, write_projection

    write_manifest("subgraph", cfg, seed, out, {"graph": graph_path}, [out, f"{out}.schema.json"])
    g = load_graph(graph_path)
    edges = project_subgraph(
        g, node_type, via,
        top_k if top_k is not None else cfg.semantic.top_k,
        min_weight if min_weight is not None else cfg.semantic.min_weight,
    )
    n = write_projection(g, edges, node_type, name or f"{node_type}_via_{via}", out)
    click.echo(f"wrote {n} edges to {out}")


@cli.command("export-tokens")
@common_options()
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--interactions", "log_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Also write per-user token sequences to OUT.sequences.jsonl.")
def export_tokens(seed: int, out: str, cfg: RankGraphConfig, table_path: str, log_path: Optional[str]) -> None:
    """Graph-token file (RGK1) for downstream sequence models."""
    from .eval.interactions import read_interaction_log
    from .serving.tables import load_table
    from .serving.tokens import export_graph_tokens, export_user_token_sequences

    outputs = [out] + ([f"{out}.sequences.jsonl"] if log_path else [])
    write_manifest("export-tokens", cfg, seed, out, {"table": table_path, "interactions": log_path}, outputs)
    table = load_table(table_path)
    n = export_graph_tokens(table, out)
    if log_path:
        users = export_user_token_sequences(read_interaction_log(log_path), table, outputs[1])
        click.echo(f"wrote {users} user sequences")
    click.echo(f"wrote {n} tokens to {out}")


def _tables_by_type(paths: Sequence[str], head: int):
    from .serving.tables import load_table

    tables = {}
    for p in paths:
        t = load_table(p)
        if t.head != head:
            logger.warning(f"{p} holds head {t.head}, evaluating head {head} tables only")
            continue
        tables[t.node_type] = t
    if not tables:
        raise ValidationError(f"no tables for head {head}")
    return tables


@cli.command("eval-edge-recall")
@common_options()
@click.option("--table", "table_paths", multiple=True, required=True, type=click.Path(exists=True, dir_okay=False),
              help="Embedding table (repeat once per node type).")
@click.option("--next-graph", "graph_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--compare-random", is_flag=True, help="Also score random embeddings with the same ids.")
def eval_edge_recall_cmd(seed: int, out: str, cfg: RankGraphConfig, table_paths: Sequence[str], graph_path: str,
                         compare_random: bool) -> None:
    """Recall@k of next-period edges among sampled endpoints (JSON report at OUT)."""
    from .eval.recall import eval_edge_recall, random_table

    inputs = {f"table{i}": p for i, p in enumerate(table_paths)}
    inputs["next_graph"] = graph_path
    write_manifest("eval-edge-recall", cfg, seed, out, inputs, [out])
    tables = _tables_by_type(table_paths, cfg.edge_recall.head)
    g = load_graph(graph_path)
    report = eval_edge_recall(tables, g, cfg.edge_recall, derive_seed(seed, "eval.edge"))
    payload = report.to_dict()
    payload["seed"] = seed
    if compare_random:
        rnd = {t: random_table(tab, derive_seed(seed, f"eval.random.{t}")) for t, tab in sorted(tables.items())}
        payload["random_embeddings"] = eval_edge_recall(rnd, g, cfg.edge_recall, derive_seed(seed, "eval.edge")).to_dict()
    _write_json(out, payload)
    click.echo(json.dumps(payload["recall"], sort_keys=True))


@cli.command("eval-engagement-recall")
@common_options()
@click.option("--table", "table_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Item embedding table.")
@click.option("--interactions", "log_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--compare-random", is_flag=True, help="Also score random embeddings with the same ids.")
@click.pass_context
def eval_engagement_recall_cmd(ctx: click.Context, seed: int, out: str, cfg: RankGraphConfig, table_path: str,
                               log_path: str, compare_random: bool) -> None:
    """Future-interaction recall@k from trigger-item neighbors (JSON report at OUT)."""
    from .eval.interactions import read_interaction_log
    from .eval.recall import eval_engagement_recall, random_table
    from .serving.tables import load_table

    write_manifest("eval-engagement-recall", cfg, seed, out, {"table": table_path, "interactions": log_path}, [out])
    threads = (ctx.obj or {}).get("threads", 1)
    table = load_table(table_path)
    log = read_interaction_log(log_path)
    report = eval_engagement_recall(table, log, cfg.engagement_recall, threads)
    payload = report.to_dict()
    payload["seed"] = seed
    if compare_random:
        rnd = random_table(table, derive_seed(seed, "eval.random"))
        payload["random_embeddings"] = eval_engagement_recall(rnd, log, cfg.engagement_recall, threads).to_dict()
    _write_json(out, payload)
    click.echo(json.dumps(payload["recall"], sort_keys=True))


@cli.command("grad-check")
@common_options(out_required=False)
@click.option("--epsilon", type=float, default=1e-5, show_default=True)
def grad_check_cmd(seed: int, out: Optional[str], cfg: RankGraphConfig, epsilon: float) -> int:
    """Finite-difference check of the full loss on the built-in 10-node fixture."""
    from .training.gradcheck import TOLERANCE, run_grad_check

    if out:
        write_manifest("grad-check", cfg, seed, out, {}, [out])
    result = run_grad_check(seed, epsilon)
    if out:
        _write_json(out, {
            "max_error": result.max_error, "tolerance": TOLERANCE, "passed": result.passed,
            "parameters": result.parameters, "scalars": result.scalars, "sources": result.sources,
            "seed": seed, "epsilon": epsilon,
        })
    click.echo(f"max relative error {result.max_error:.3e}")
    log_event("cli", "grad_check", max_error=result.max_error, passed=result.passed)
    return 0 if result.passed else 2


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Invoke the CLI and map outcomes to exit codes."""
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name="rankgraph", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except ValidationError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except (RankGraphError, OSError) as e:
        click.echo(f"runtime error: {e}", err=True)
        return 2
    return rv if isinstance(rv, int) else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
