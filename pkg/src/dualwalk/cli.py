"""Operator surface: one subcommand per pipeline stage.

    preprocess -> pretrain -> cluster -> train -> eval / longpath
                                       \\-> dump-policy / dump-trajectories

Each stage writes its outputs plus a manifest into a run directory and
validates the hashes of everything it consumes. Exit codes: 0 success,
2 config error, 3 artifact error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import ClusterMap, build_cluster_graph, kmeans
from .env import DualEnv, dump_trajectories
from .evaluation import (
    beam_search,
    fact_prediction_map,
    link_prediction_metrics,
    link_prediction_ranks,
    random_walk_ranks,
    write_results_csv,
)
from .kg import GraphFormatError, GraphOptions, KnowledgeGraph
from .longpath import ablate_and_run, find_short_paths, remove_reported_edges, write_removed_edges
from .policy import PolicyDims, PolicyParameters
from .runio import (
    ArtifactError,
    ConfigError,
    build_config,
    check_artifact,
    dump_config,
    load_config_file,
    load_manifest,
    make_run_dir,
    write_manifest,
)
from .training import TrainConfig, Trainer, TrainingDiverged
from .transe import (
    EmbeddingError,
    TransEConfig,
    dump_embeddings_text,
    load_embeddings,
    save_embeddings,
    train_transe,
)

GRAPH_OPTIONS_FILE = "graph_options.json"


# -- shared loading ---------------------------------------------------------------


def load_graph_dir(graph_dir: str | Path) -> KnowledgeGraph:
    graph_dir = Path(graph_dir)
    opts_path = check_artifact(graph_dir / GRAPH_OPTIONS_FILE)
    with open(opts_path, "r", encoding="utf-8") as fh:
        recorded = json.load(fh)
    options = GraphOptions(
        add_inverse=recorded["add_inverse"],
        add_self_loop=recorded["add_self_loop"],
        max_out_degree=recorded["max_out_degree"],
    )
    paths = {}
    for split in recorded["splits"]:
        paths[split] = check_artifact(graph_dir / f"{split}.txt")
    return KnowledgeGraph.load(paths, options)


def load_stack(args, need_checkpoint: bool = False):
    kg = load_graph_dir(args.graph_dir)
    store = load_embeddings(check_artifact(args.embeddings), kg=kg)
    cmap = ClusterMap.load(check_artifact(args.clusters))
    if len(cmap.assignment) != kg.num_entities:
        raise ArtifactError("cluster assignment does not match the graph's entities")
    build_cluster_graph(kg, cmap)
    policy = None
    if need_checkpoint:
        policy, _ = PolicyParameters.load(check_artifact(args.checkpoint))
        if policy.dims.num_entities != kg.num_entities:
            raise ArtifactError("checkpoint was trained on a different graph")
    return kg, store, cmap, policy


def split_queries(kg: KnowledgeGraph, split: str):
    triples = kg.triples.get(split) or []
    if not triples:
        raise ArtifactError(f"split {split!r} has no triples")
    return [(t.source, t.relation, t.target) for t in triples]


# -- preprocess ----------------------------------------------------------------------


@dataclass
class PreprocessConfig:
    add_inverse: bool = True
    add_self_loop: bool = True
    max_out_degree: int = 200


def cmd_preprocess(args) -> int:
    cfg = build_config(
        PreprocessConfig,
        load_config_file(args.config),
        {
            "add_inverse": None if args.inverse is None else args.inverse,
            "add_self_loop": None if args.self_loop is None else args.self_loop,
            "max_out_degree": args.max_out_degree,
        },
    )
    inputs = {"train": Path(args.train)}
    for name, value in (("train_queries", args.train_queries),
                        ("dev", args.dev), ("test", args.test)):
        if value:
            inputs[name] = Path(value)
    for path in inputs.values():
        if not path.exists():
            raise ArtifactError(f"missing triple file: {path}")

    options = GraphOptions(cfg.add_inverse, cfg.add_self_loop, cfg.max_out_degree)
    kg = KnowledgeGraph.load(inputs, options)

    run = make_run_dir(args.out, dump_config(cfg), "preprocess")
    outputs = []
    for split in inputs:
        dst = run / f"{split}.txt"
        kg.save(dst, split)
        outputs.append(dst)
    kg.entities.dump(run / "entity_vocab.tsv")
    kg.relations.dump(run / "relation_vocab.tsv")
    opts_path = run / GRAPH_OPTIONS_FILE
    with open(opts_path, "w", encoding="utf-8") as fh:
        json.dump({**dump_config(cfg), "splits": sorted(inputs)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs += [run / "entity_vocab.tsv", run / "relation_vocab.tsv", opts_path]
    write_manifest(run, "preprocess", dump_config(cfg), seed=0,
                   inputs=inputs, outputs=outputs)
    mean_deg, median_deg = kg.degree_stats()
    print(f"graph: {kg.num_entities} entities, {kg.num_relations} relations "
          f"({kg.num_raw_relations} raw), degree mean {mean_deg:.2f} median {median_deg:.0f}")
    print(f"wrote {run}")
    return 0


# -- pretrain -------------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg = build_config(
        TransEConfig,
        load_config_file(args.config),
        {"dim": args.dim, "margin": args.margin, "learning_rate": args.lr,
         "epochs": args.epochs, "negatives": args.negatives,
         "batch_size": args.batch_size, "seed": args.seed},
    )
    kg = load_graph_dir(args.graph_dir)
    store = train_transe(kg, cfg)
    run = make_run_dir(args.out, dump_config(cfg), "pretrain")
    emb_path = run / "embeddings.bin"
    save_embeddings(store, emb_path)
    outputs = [emb_path]
    if args.text_dump:
        dump_embeddings_text(store, run / "embeddings.txt")
        outputs.append(run / "embeddings.txt")
    write_manifest(run, "pretrain", dump_config(cfg), cfg.seed,
                   inputs={"graph_options": Path(args.graph_dir) / GRAPH_OPTIONS_FILE},
                   outputs=outputs)
    print(f"wrote {emb_path}")
    return 0


# -- cluster ---------------------------------------------------------------------------


@dataclass
class ClusterStageConfig:
    num_clusters: int = 75
    max_iters: int = 100
    tolerance: float = 1e-4
    seed: int = 0


def cmd_cluster(args) -> int:
    cfg = build_config(
        ClusterStageConfig,
        load_config_file(args.config),
        {"num_clusters": args.num_clusters, "max_iters": args.max_iters,
         "tolerance": args.tolerance, "seed": args.seed},
    )
    kg = load_graph_dir(args.graph_dir)
    store = load_embeddings(check_artifact(args.embeddings), kg=kg)
    cmap = kmeans(store, cfg.num_clusters, max_iters=cfg.max_iters,
                  tol=cfg.tolerance, seed=cfg.seed)
    build_cluster_graph(kg, cmap)
    cmap.compute_embeddings(store)

    run = make_run_dir(args.out, dump_config(cfg), "cluster")
    npz = run / "clusters.npz"
    cmap.save(npz)
    cmap.dump_assignment(run / "assignment.tsv", kg)
    cmap.dump_cluster_graph(run / "cluster_graph.tsv")
    write_manifest(run, "cluster", dump_config(cfg), cfg.seed,
                   inputs={"embeddings": Path(args.embeddings),
                           "graph_options": Path(args.graph_dir) / GRAPH_OPTIONS_FILE},
                   outputs=[npz, run / "assignment.tsv", run / "cluster_graph.tsv"])
    sizes = [len(m) for m in cmap.members]
    print(f"{cfg.num_clusters} clusters, sizes min {min(sizes)} max {max(sizes)}; wrote {run}")
    return 0


# -- train -----------------------------------------------------------------------------


def _train_flag_overrides(args) -> dict:
    return {
        "horizon": args.horizon, "epochs": args.epochs,
        "rollouts_train": args.rollouts_train, "rollouts_eval": args.rollouts_eval,
        "batch_size": args.batch_size, "learning_rate": args.lr,
        "entropy_beta": args.entropy_beta, "baseline_decay": args.baseline_decay,
        "seed": args.seed, "beam_width": args.beam, "eval_every": args.eval_every,
        "return_to_go": True if args.return_to_go else None,
        "disable_phi": True if args.disable_phi else None,
        "partner_sharing": False if args.no_partner_sharing else None,
        "embed_dim": args.embed_dim, "hidden_dim": args.hidden_dim,
    }


def _policy_for(kg, store, cmap, cfg: TrainConfig, warm: bool) -> PolicyParameters:
    dims = PolicyDims(
        embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim,
        num_entities=kg.num_entities, num_relations=kg.num_relations,
        num_clusters=cmap.num_clusters,
    )
    if store.dim != cfg.embed_dim:
        raise ConfigError(
            f"embed_dim {cfg.embed_dim} does not match pretrained dimension {store.dim}"
        )
    policy = PolicyParameters(dims, seed=cfg.seed, partner_sharing=cfg.partner_sharing)
    if warm:
        policy.warm_start(store, cmap)
    return policy


def _training_queries(kg: KnowledgeGraph):
    split = "train_queries" if kg.triples["train_queries"] else "train"
    return split_queries(kg, split)


def cmd_train(args) -> int:
    file_cfg = load_config_file(args.config)
    cfg = build_config(TrainConfig, file_cfg, _train_flag_overrides(args))
    kg, store, cmap, _ = load_stack(args)
    cfg.num_clusters = cmap.num_clusters  # resolved from the cluster artifact
    if "embed_dim" not in file_cfg and args.embed_dim is None:
        cfg.embed_dim = store.dim
    cfg.validate()

    policy = _policy_for(kg, store, cmap, cfg, warm=not args.cold_start)
    trainer = Trainer(kg, cmap, store, policy, cfg,
                      _training_queries(kg),
                      dev_queries=split_queries(kg, "dev") if kg.triples["dev"] else [])
    run = make_run_dir(args.out, dump_config(cfg), "train")
    metrics_path = run / "metrics.csv"
    ckpt_path = run / "policy.ckpt"
    trainer.train(metrics_path=metrics_path, checkpoint_path=ckpt_path)
    write_manifest(run, "train", dump_config(cfg), cfg.seed,
                   inputs={"embeddings": Path(args.embeddings),
                           "clusters": Path(args.clusters),
                           "graph_options": Path(args.graph_dir) / GRAPH_OPTIONS_FILE},
                   outputs=[metrics_path, ckpt_path])
    print(f"wrote {run}")
    return 0


# -- eval -------------------------------------------------------------------------------


@dataclass
class EvalConfig:
    task: str = "link"            # link | fact
    split: str = "test"
    horizon: int = 3
    beam_width: int = 50
    seed: int = 0
    raw_ranks: bool = False       # skip filtered ranking
    negatives: int = 10           # fact task: negatives per positive
    baseline: str = "none"        # none | random-walk
    rollouts: int = 100           # random-walk baseline rollouts
    dataset_name: str = "dataset"


def cmd_eval(args) -> int:
    if args.from_manifest:
        manifest = load_manifest(Path(args.from_manifest))
        if manifest.get("stage") != "eval":
            raise ArtifactError(f"{args.from_manifest} is not an eval manifest")
        stored = dict(manifest["config"])
        stage_inputs = manifest["inputs"]
        args.graph_dir = str(Path(stage_inputs["graph_options"]["path"]).parent)
        args.embeddings = stage_inputs["embeddings"]["path"]
        args.clusters = stage_inputs["clusters"]["path"]
        args.checkpoint = stage_inputs["checkpoint"]["path"]
        cfg = build_config(EvalConfig, stored, {})
    else:
        for required in ("graph_dir", "embeddings", "clusters", "checkpoint"):
            if getattr(args, required) is None:
                raise ConfigError(f"--{required.replace('_', '-')} is required")
        cfg = build_config(
            EvalConfig,
            load_config_file(args.config),
            {"task": args.task, "split": args.split, "horizon": args.horizon,
             "beam_width": args.beam, "seed": args.seed,
             "raw_ranks": True if args.raw_ranks else None,
             "negatives": args.negatives, "baseline": args.baseline,
             "dataset_name": args.dataset_name},
        )
    if cfg.task not in ("link", "fact"):
        raise ConfigError(f"unknown eval task {cfg.task!r}")

    kg, store, cmap, policy = load_stack(args, need_checkpoint=True)
    env = DualEnv(kg, cmap, policy)
    queries = split_queries(kg, cfg.split)
    filter_sets = kg.answer_sets(("train", "train_queries", "dev", "test"))
    rows = []

    if cfg.task == "link":
        ranks = link_prediction_ranks(env, queries, cfg.horizon, cfg.beam_width,
                                      filter_sets, filtered=not cfg.raw_ranks)
        for metric, value in link_prediction_metrics(ranks).items():
            rows.append({"dataset": cfg.dataset_name, "task": "link_prediction",
                         "metric": metric, "value": value,
                         "beam": cfg.beam_width, "T": cfg.horizon, "seed": cfg.seed})
        if cfg.baseline == "random-walk":
            base = random_walk_ranks(kg, queries, cfg.horizon, cfg.rollouts,
                                     cfg.seed, filter_sets, filtered=not cfg.raw_ranks)
            for metric, value in link_prediction_metrics(base).items():
                rows.append({"dataset": cfg.dataset_name, "task": "random_walk_baseline",
                             "metric": metric, "value": value,
                             "beam": 0, "T": cfg.horizon, "seed": cfg.seed})
    else:
        rows.extend(_fact_prediction(kg, env, queries, filter_sets, cfg))

    run = make_run_dir(args.out, dump_config(cfg), "eval")
    results = run / "results.csv"
    write_results_csv(results, rows)
    write_manifest(run, "eval", dump_config(cfg), cfg.seed,
                   inputs={"embeddings": Path(args.embeddings),
                           "clusters": Path(args.clusters),
                           "checkpoint": Path(args.checkpoint),
                           "graph_options": Path(args.graph_dir) / GRAPH_OPTIONS_FILE},
                   outputs=[results])
    for r in rows:
        print(f"{r['task']}/{r['metric']}: {r['value']:.4f}")
    print(f"wrote {results}")
    return 0


def _fact_prediction(kg, env, queries, filter_sets, cfg: EvalConfig) -> list[dict]:
    """MAP per query relation; groundtruth-relation edges removed while walking."""
    rng = np.random.default_rng(cfg.seed)
    by_relation: dict[int, list] = {}
    for e_s, r_q, gold in queries:
        by_relation.setdefault(r_q, []).append((e_s, r_q, gold))
    rows = []
    for rel, rel_queries in sorted(by_relation.items()):
        for t in list(kg.triples["train"]):
            if t.relation == rel and kg.has_edge(t.source, t.relation, t.target):
                kg.remove_edge(t)
        tasks = []
        for e_s, r_q, gold in rel_queries:
            known = filter_sets.get((e_s, r_q), {gold})
            negatives = []
            while len(negatives) < cfg.negatives:
                cand = int(rng.integers(0, kg.num_entities))
                if cand != e_s and cand not in known and cand not in negatives:
                    negatives.append(cand)
            tasks.append((e_s, r_q, [gold], negatives))
        value = fact_prediction_map(env, tasks, cfg.horizon, cfg.beam_width,
                                    seed=cfg.seed)
        kg.restore_all()
        rows.append({"dataset": cfg.dataset_name, "task": kg.relations.token(rel),
                     "metric": "map", "value": value,
                     "beam": cfg.beam_width, "T": cfg.horizon, "seed": cfg.seed})
    return rows


# -- longpath ------------------------------------------------------------------------------


@dataclass
class LongpathConfig:
    task_split: str = "test"
    horizons: str = "3,4,5"
    repetitions: int = 50
    max_edges: int = 2
    recovery: bool = False
    seed: int = 0


def cmd_longpath(args) -> int:
    lp_cfg = build_config(
        LongpathConfig,
        load_config_file(args.config),
        {"task_split": args.task_split, "horizons": args.horizons,
         "repetitions": args.repetitions, "max_edges": args.max_edges,
         "recovery": True if args.recovery else None, "seed": args.seed},
    )
    train_file_cfg = load_config_file(args.train_config)
    base_train_cfg = build_config(TrainConfig, train_file_cfg, {})

    kg, store, cmap, _ = load_stack(args)
    base_train_cfg.num_clusters = cmap.num_clusters
    if "embed_dim" not in train_file_cfg:
        base_train_cfg.embed_dim = store.dim
    horizons = [int(h) for h in lp_cfg.horizons.split(",") if h]
    if not horizons:
        raise ConfigError("no horizons given")

    queries = split_queries(kg, lp_cfg.task_split)
    task_triples = [t for t in kg.triples[lp_cfg.task_split]]
    filter_sets = kg.answer_sets(("train", "train_queries", "dev", "test"))
    run = make_run_dir(args.out, dump_config(lp_cfg), "longpath")

    def run_fn(graph, horizon):
        cfg = TrainConfig(**{**dump_config(base_train_cfg), "horizon": horizon})
        policy = _policy_for(graph, store, cmap, cfg, warm=True)
        build_cluster_graph(graph, cmap)  # respect current (possibly ablated) edges
        trainer = Trainer(graph, cmap, store, policy, cfg, _training_queries(graph),
                          dev_queries=[])
        trainer.train()
        env = DualEnv(graph, cmap, policy)
        ranks = link_prediction_ranks(env, queries, horizon, cfg.beam_width, filter_sets)
        return link_prediction_metrics(ranks)

    results = ablate_and_run(
        kg, task_triples, run_fn, horizons,
        repetitions=lp_cfg.repetitions, max_edges=lp_cfg.max_edges,
        seed=lp_cfg.seed, recovery_mode=lp_cfg.recovery,
        csv_path=run / "metrics_vs_length.csv",
    )
    outputs = [run / "metrics_vs_length.csv"]
    if not lp_cfg.recovery:
        # re-discover and persist the removed edge list for the record
        report = find_short_paths(kg, task_triples, lp_cfg.repetitions,
                                  lp_cfg.max_edges, lp_cfg.seed)
        remove_reported_edges(kg, report)
        write_removed_edges(run / "removed_edges.txt", kg)
        kg.restore_all()
        outputs.append(run / "removed_edges.txt")
    write_manifest(run, "longpath", dump_config(lp_cfg), lp_cfg.seed,
                   inputs={"embeddings": Path(args.embeddings),
                           "clusters": Path(args.clusters),
                           "graph_options": Path(args.graph_dir) / GRAPH_OPTIONS_FILE},
                   outputs=outputs)
    for res in results:
        printable = ", ".join(f"{k}={v:.4f}" for k, v in res.metrics.items())
        print(f"T={res.horizon}: {printable}")
    print(f"wrote {run}")
    return 0


# -- debug dumps ------------------------------------------------------------------------------


def cmd_dump_policy(args) -> int:
    kg, store, cmap, policy = load_stack(args, need_checkpoint=True)
    env = DualEnv(kg, cmap, policy)
    if args.source not in kg.entities or args.relation not in kg.relations:
        raise ConfigError(f"unknown source/relation: {args.source}, {args.relation}")
    e_s = kg.entities.id(args.source)
    r_q = kg.relations.id(args.relation)

    out = Path(args.out_file)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", "candidate", "probability", "chosen"])
        ent = np.array([e_s])
        clu = cmap.assignment[ent]
        hist = policy.init_histories(clu, ent, np.array([r_q]))
        for step in range(1, args.horizon + 1):
            g_cand, g_mask = env.giant_candidates(clu)
            g_probs = policy.score_cluster_actions(clu, hist.h_c, g_cand, g_mask)
            g_choice = int(g_probs.value.argmax(axis=1)[0])
            for j in range(g_mask.shape[1]):
                if not g_mask[0, j]:
                    continue
                name = "STOP" if j == 0 else f"cluster:{g_cand[0, j]}"
                w.writerow([step, "cluster", name, f"{g_probs.value[0, j]:.6f}",
                            int(j == g_choice)])
            d_rels, d_tgts, d_mask = env.dwarf_candidates(ent)
            d_probs = policy.score_entity_actions(ent, np.array([r_q]), hist.h_e,
                                                  d_rels, d_tgts, d_mask)
            d_choice = int(d_probs.value.argmax(axis=1)[0])
            for j in range(d_mask.shape[1]):
                if not d_mask[0, j]:
                    continue
                name = (f"{kg.relations.token(int(d_rels[0, j]))}->"
                        f"{kg.entities.token(int(d_tgts[0, j]))}")
                w.writerow([step, "entity", name, f"{d_probs.value[0, j]:.6f}",
                            int(j == d_choice)])
            new_clu = g_cand[np.arange(1), [g_choice]]
            new_ent = d_tgts[np.arange(1), [d_choice]]
            a_c = policy.action_embedding_clusters(new_clu)
            a_e = policy.action_embedding_edges(d_rels[np.arange(1), [d_choice]], new_ent)
            hist = policy.step_histories(hist, a_c, a_e)
            ent, clu = new_ent, new_clu
    print(f"wrote {out}")
    return 0


def cmd_dump_trajectories(args) -> int:
    kg, store, cmap, policy = load_stack(args, need_checkpoint=True)
    env = DualEnv(kg, cmap, policy)
    queries = split_queries(kg, args.split)
    e_s = np.repeat([q[0] for q in queries], args.rollouts)
    r_q = np.repeat([q[1] for q in queries], args.rollouts)
    rng = np.random.default_rng(args.seed)
    batch = env.run(e_s, r_q, args.horizon, mode="sample", rng=rng)
    dump_trajectories(args.out_file, kg, batch)
    print(f"wrote {args.out_file}")
    return 0


# -- parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualwalk",
                                description="dual-agent graph-walking pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common_out(sp):
        sp.add_argument("--out", default="runs", help="run-directory root")
        sp.add_argument("--config", default=None, help="JSON config file")

    sp = sub.add_parser("preprocess", help="index triple files into a graph dir")
    sp.add_argument("--train", required=True)
    sp.add_argument("--train-queries", default=None)
    sp.add_argument("--dev", default=None)
    sp.add_argument("--test", default=None)
    sp.add_argument("--inverse", action=argparse.BooleanOptionalAction, default=None,
                    help="materialize inverse relations (default on)")
    sp.add_argument("--self-loop", action=argparse.BooleanOptionalAction, default=None,
                    help="add NO_OP self-loops (default on)")
    sp.add_argument("--max-out-degree", type=int, default=None)
    add_common_out(sp)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("pretrain", help="pretrain translational embeddings")
    sp.add_argument("--graph-dir", required=True)
    sp.add_argument("--dim", type=int, default=None)
    sp.add_argument("--margin", type=float, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--negatives", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--text-dump", action="store_true")
    add_common_out(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("cluster", help="k-means partition and cluster graph")
    sp.add_argument("--graph-dir", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--num-clusters", type=int, default=None)
    sp.add_argument("--max-iters", type=int, default=None)
    sp.add_argument("--tolerance", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    add_common_out(sp)
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("train", help="joint policy training")
    sp.add_argument("--graph-dir", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--rollouts-train", type=int, default=None)
    sp.add_argument("--rollouts-eval", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--entropy-beta", type=float, default=None)
    sp.add_argument("--baseline-decay", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--beam", type=int, default=None)
    sp.add_argument("--eval-every", type=int, default=None)
    sp.add_argument("--embed-dim", type=int, default=None)
    sp.add_argument("--hidden-dim", type=int, default=None)
    sp.add_argument("--return-to-go", action="store_true")
    sp.add_argument("--disable-phi", action="store_true")
    sp.add_argument("--no-partner-sharing", action="store_true")
    sp.add_argument("--cold-start", action="store_true",
                    help="skip warm-starting policy tables from the pretrained store")
    add_common_out(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="beam-search evaluation")
    sp.add_argument("--graph-dir")
    sp.add_argument("--embeddings")
    sp.add_argument("--clusters")
    sp.add_argument("--checkpoint")
    sp.add_argument("--task", choices=["link", "fact"], default=None)
    sp.add_argument("--split", default=None)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--beam", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--raw-ranks", action="store_true")
    sp.add_argument("--negatives", type=int, default=None)
    sp.add_argument("--baseline", choices=["none", "random-walk"], default=None)
    sp.add_argument("--dataset-name", default=None)
    sp.add_argument("--from-manifest", default=None,
                    help="rerun an eval exactly as recorded in its manifest")
    add_common_out(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("longpath", help="short-path ablation / recovery sweeps")
    sp.add_argument("--graph-dir", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--train-config", default=None,
                    help="JSON TrainConfig used for the per-horizon retraining")
    sp.add_argument("--task-split", default=None)
    sp.add_argument("--horizons", default=None, help="comma-separated, e.g. 3,4,5")
    sp.add_argument("--repetitions", type=int, default=None)
    sp.add_argument("--max-edges", type=int, default=None)
    sp.add_argument("--recovery", action="store_true",
                    help="keep the graph intact and only raise the horizon")
    sp.add_argument("--seed", type=int, default=None)
    add_common_out(sp)
    sp.set_defaults(func=cmd_longpath)

    sp = sub.add_parser("dump-policy", help="per-step candidate distributions for one query")
    sp.add_argument("--graph-dir", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--source", required=True)
    sp.add_argument("--relation", required=True)
    sp.add_argument("--horizon", type=int, default=3)
    sp.add_argument("--out-file", default="policy_dump.csv")
    sp.set_defaults(func=cmd_dump_policy)

    sp = sub.add_parser("dump-trajectories", help="sampled rollout dump for a split")
    sp.add_argument("--graph-dir", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--clusters", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="dev")
    sp.add_argument("--rollouts", type=int, default=5)
    sp.add_argument("--horizon", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-file", default="trajectories.csv")
    sp.set_defaults(func=cmd_dump_trajectories)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArtifactError, GraphFormatError, FileNotFoundError) as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 3
    except (TrainingDiverged, EmbeddingError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
