"""Full training loop, sparse-graph protocol, and the ablation grid."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import contrastive as ct
from . import decoupling as dc
from .clustering import Assignment, ModularityInitConfig, init_assignments, \
    modularity, update_assignments
from .config import ExperimentConfig
from .errors import DataError, MecoleError
from .graphs import AttributeBag, Graph, GraphBundle, SBMConfig, \
    build_knn_similarity_graph, generate_sbm, load_attribute_bags, \
    load_edge_list, load_features, load_labels, tfidf_class_features
from .metrics import MetricsReport, clustering_accuracy, nmi

logger = logging.getLogger("mecole.training")

__all__ = ["Dataset", "load_dataset", "run_training", "sparse_eval",
           "run_ablation_grid", "export_assignments"]


@dataclass
class Dataset:
    bundle: GraphBundle
    X: np.ndarray | None
    labels: np.ndarray | None
    bags: AttributeBag | None = None


def load_dataset(cfg: ExperimentConfig):
    """Materialize the graph bundle, features, and labels for a run."""
    if cfg.uses_sbm:
        if cfg.sbm_blocks < 2 or cfg.sbm_block_size < 1:
            raise DataError("no edge_path given and SBM config incomplete")
        sbm = SBMConfig(blocks=cfg.sbm_blocks,
                        block_sizes=(cfg.sbm_block_size,) * cfg.sbm_blocks,
                        p_in=cfg.sbm_p_in, p_out=cfg.sbm_p_out,
                        dep_dim=cfg.sbm_dep_dim, inv_dim=cfg.sbm_inv_dim,
                        noise_sigma=cfg.sbm_noise_sigma,
                        confound_strength=cfg.sbm_confound,
                        seed=cfg.seed)
        graph, X, labels = generate_sbm(sbm)
    else:
        graph = load_edge_list(cfg.edge_path)
        X = load_features(cfg.feature_path, graph.n) \
            if cfg.feature_path else None
        labels = load_labels(cfg.label_path) if cfg.label_path else None
        if labels is not None and len(labels) != graph.n:
            raise DataError("label count does not match node count")

    aux = {}
    if cfg.aux_edge_path and not cfg.drop_gv:
        aux["G_V"] = load_edge_list(cfg.aux_edge_path, n_hint=graph.n)
    if X is not None and cfg.knn_k > 0 and not cfg.drop_gx:
        aux["G_X"] = build_knn_similarity_graph(X, cfg.knn_k, cfg.eta_sim)
    bags = None
    if cfg.bags_path and cfg.vocab_path:
        raw_bags = load_attribute_bags(cfg.bags_path)
        if len(raw_bags) != graph.n:
            raise DataError("attribute bag count does not match node count")
        vocab_rows = []
        with open(cfg.vocab_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    vocab_rows.append([float(t) for t in
                                       line.replace(",", " ").split()])
        bags = AttributeBag(bags=raw_bags, vocabulary=np.asarray(vocab_rows))
    return Dataset(bundle=GraphBundle(primary=graph, auxiliary=aux),
                   X=X, labels=labels, bags=bags)


def _mask_features(X, rate, rng):
    mask = rng.random(X.shape) >= rate
    return X * mask


def _drop_edges(graph, rate, rng):
    keep = [e for e in graph.edges if rng.random() >= rate]
    if not keep:
        keep = list(graph.edges[:1])
    return Graph(graph.n, keep, node_kind=graph.node_kind)


def _build_batches(cfg, assignment, E, graph, p_ce, rng):
    """Virtual-node pipeline: anchors -> virtual nodes -> hard negatives."""
    anchors = ct.sample_anchors(assignment, cfg.per_class_anchors, rng)
    batches = []
    for v in anchors:
        if graph.neighbors(v).size == 0:
            continue
        neg_nodes, neg_scores = [], []
        for _ in range(cfg.virtual_per_anchor):
            try:
                virt = ct.synthesize_virtual_node(v, assignment, E, p_ce, rng)
            except MecoleError:
                break
            try:
                nodes, p = ct.sample_negatives(
                    virt, E, graph, cfg.negatives_m, rng,
                    pool_factor=cfg.pool_factor, uniform=cfg.neg_uniform)
            except MecoleError:
                continue
            neg_nodes.extend(int(u) for u in nodes)
            neg_scores.extend(p.tolist())
        if not neg_nodes:
            continue
        pos, pos_p = ct.sample_positives(v, graph, cfg.positives, rng)
        neg_p = np.asarray(neg_scores)
        batches.append(ct.ContrastiveBatch(
            anchor=int(v), positives=pos, pos_p=pos_p,
            negatives=np.asarray(neg_nodes), neg_p=neg_p / neg_p.sum()))
    return batches


def _build_augment_batches(cfg, assignment, E, graph, rng):
    """Graph-augmentation ablation: positives from an edge-dropped view,
    negatives uniform outside the neighborhood."""
    view = _drop_edges(graph, 0.2, rng)
    anchors = ct.sample_anchors(assignment, cfg.per_class_anchors, rng)
    batches = []
    for v in anchors:
        nbrs = view.neighbors(v)
        if nbrs.size == 0:
            continue
        pos, pos_p = ct.sample_positives(v, view, cfg.positives, rng)
        excluded = set(graph.neighbors(v).tolist()) | {v}
        candidates = np.array([u for u in range(graph.n)
                               if u not in excluded])
        if candidates.size == 0:
            continue
        take = min(cfg.negatives_m * cfg.virtual_per_anchor, candidates.size)
        negs = np.asarray(sorted(int(u) for u in
                                 rng.choice(candidates, size=take,
                                            replace=False)))
        batches.append(ct.ContrastiveBatch(
            anchor=int(v), positives=pos, pos_p=pos_p,
            negatives=negs, neg_p=np.full(take, 1.0 / take)))
    return batches


def run_training(cfg: ExperimentConfig, dataset: Dataset | None = None,
                 variant="baseline"):
    """Execute the full iteration loop and return a MetricsReport."""
    t0 = time.time()
    # separate streams so contrastive sampling cannot perturb the loss
    # trajectory of the reconstruction/discrepancy terms (alpha_ce = 0
    # must match no_cl exactly)
    rng = np.random.default_rng([cfg.seed, 0])
    rng_cl = np.random.default_rng([cfg.seed, 1])
    if dataset is None:
        dataset = load_dataset(cfg)
    bundle, X, labels = dataset.bundle, dataset.X, dataset.labels
    graph = bundle.primary

    dim_o = 0 if cfg.no_decouple else cfg.dim_o
    init_cfg = ModularityInitConfig(epochs=cfg.init_epochs, lr=cfg.init_lr,
                                    collapse_weight=cfg.collapse_weight,
                                    hidden=cfg.hidden)
    assignment = init_assignments(bundle, X, cfg.K, init_cfg, cfg.seed)
    init_acc = None
    if labels is not None:
        init_acc = clustering_accuracy(assignment.hard, labels)
        logger.info("init accuracy %.4f", init_acc)

    channels = [graph] + list(bundle.auxiliary.values())
    if dataset.bags is not None:
        # key-attribute graph from tf-idf class features of the initial
        # assignments, thresholded like the content graph
        m_feats = tfidf_class_features(dataset.bags, assignment)
        g_m = build_knn_similarity_graph(m_feats, max(cfg.knn_k, 1),
                                         cfg.eta_sim)
        if g_m.num_edges > 0:
            channels.append(g_m)
    raw_hats = [ad.normalize_adjacency(g) for g in channels]
    in_dim = X.shape[1] if X is not None else None
    encoder = dc.DecoupledEncoder(in_dim, cfg.hidden, cfg.dim_d, dim_o,
                                  len(channels), cfg.seed, n=graph.n)
    params = encoder.parameters()
    mlp = None
    if cfg.mlp_predictor:
        mlp = dc.MlpPredictor(cfg.dim_d, dim_o, 32, cfg.seed + 1)
        params = params + mlp.parameters()
    opt = ad.Adam(params, lr=cfg.lr)

    report = MetricsReport(seed=cfg.seed, config=cfg.to_dict(),
                           variant=variant, init_accuracy=init_acc)
    weights_state = None
    E = None
    for epoch in range(cfg.epochs):
        # rewire the dependent channel using last epoch's frozen H_o
        if E is not None and dim_o > 0:
            rewired = dc.rewire(graph, E, cfg.eta)
            hats_d = [ad.normalize_adjacency(rewired)] + raw_hats[1:]
        else:
            hats_d = raw_hats
        X_in = X
        if cfg.graph_augment and X is not None:
            X_in = _mask_features(X, 0.2, rng_cl)
        E = encoder.encode(hats_d, raw_hats,
                           X_in if X is not None else None)

        l1 = dc.reconstruction_loss(graph, E, cfg.neg_ratio, rng, mlp=mlp)
        loss = l1
        l2_val = 0.0
        if dim_o > 0:
            nonempty = sum(assignment.members(k).size > 0
                           for k in range(cfg.K))
            if nonempty >= 2:
                l2 = dc.discrepancy_loss(E, assignment, cfg.disc_metric,
                                         cfg.disc_pairs, rng)
                loss = ad.add(loss, ad.mul(l2, cfg.disc_weight))
                l2_val = l2.item() * cfg.disc_weight

        lce_val = 0.0
        if not cfg.no_cl:
            if cfg.graph_augment:
                batches = _build_augment_batches(cfg, assignment, E, graph,
                                                 rng_cl)
            else:
                batches = _build_batches(cfg, assignment, E, graph,
                                         cfg.p_ce_at(epoch), rng_cl)
            if batches:
                lce = ct.contrastive_loss(
                    batches, E, cfg.tau,
                    include_positive_in_denominator=cfg.infonce_standard)
                lce_val = lce.item()
                if cfg.alpha_ce > 0:
                    loss = ad.add(loss, ad.mul(lce, cfg.alpha_ce))

        opt.zero_grad()
        loss.backward()
        opt.step()

        l1_val = l1.item()
        total = l1_val + l2_val + cfg.alpha_ce * lce_val \
            if not cfg.no_cl else l1_val + l2_val
        report.epoch_losses.append(
            {"epoch": epoch, "L1": l1_val, "L2": l2_val,
             "LCE": lce_val, "L": total})
        logger.debug("epoch %d: L1=%.4f L2=%.4f LCE=%.4f L=%.4f",
                     epoch, l1_val, l2_val, lce_val, total)

        due = epoch >= cfg.assign_warmup and \
            (epoch - cfg.assign_warmup) % cfg.assign_every == 0
        if due or epoch == cfg.epochs - 1 and epoch >= cfg.assign_warmup:
            assignment, weights_state = update_assignments(
                E, assignment, cfg.q_confidence, cfg.relevance_floor,
                cfg.seed + epoch, prev_weights=weights_state,
                return_weights=True)

    pred = assignment.hard
    if labels is not None:
        report.accuracy = clustering_accuracy(pred, labels)
        report.nmi = nmi(pred, labels)
    if graph.num_edges > 0:
        report.modularity = modularity(graph, pred)
    report.wall_clock_s = time.time() - t0
    report.final_assignment = assignment
    return report


def export_assignments(path, assignment):
    """CSV export: node_id, argmax class, K soft values, relevant flag."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["node_id", "class"] + \
            [f"r{k}" for k in range(assignment.K)] + ["relevant"]
        writer.writerow(header)
        for i in range(assignment.n):
            writer.writerow([i, int(assignment.hard[i])] +
                            [f"{v:.6f}" for v in assignment.R[i]] +
                            [int(assignment.relevant[i])])


def write_report(out_dir, report, name="metrics"):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{name}.json"), "w",
              encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, f"{name}_losses.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L1", "L2", "LCE", "L"])
        for row in report.epoch_losses:
            writer.writerow([row["epoch"], row["L1"], row["L2"],
                             row["LCE"], row["L"]])
    if getattr(report, "final_assignment", None) is not None:
        export_assignments(os.path.join(out_dir, f"{name}_assignments.csv"),
                           report.final_assignment)


def sparse_eval(cfg: ExperimentConfig, fraction):
    """Drop the top-degree fraction of nodes, retrain, evaluate the rest."""
    if not 0.0 < fraction < 1.0:
        raise DataError("fraction must lie in (0, 1)")
    dataset = load_dataset(cfg)
    graph = dataset.bundle.primary
    remove = int(np.ceil(fraction * graph.n))
    if remove == 0:
        return run_training(cfg, dataset=dataset, variant="sparse")
    deg = graph.degrees
    order = sorted(range(graph.n), key=lambda u: (-deg[u], u))
    keep = sorted(set(range(graph.n)) - set(order[:remove]))
    sub = graph.subgraph(keep)
    if sub.num_edges == 0:
        raise DataError("sparse protocol removed every edge")
    aux = {name: g.subgraph(keep)
           for name, g in dataset.bundle.auxiliary.items()}
    X = dataset.X[keep] if dataset.X is not None else None
    labels = dataset.labels[keep] if dataset.labels is not None else None
    sparse_data = Dataset(bundle=GraphBundle(primary=sub, auxiliary=aux),
                          X=X, labels=labels)
    return run_training(cfg, dataset=sparse_data, variant="sparse")


ABLATION_FLAGS = ("no_decouple", "neg_uniform", "mlp_predictor", "no_cl",
                  "graph_augment", "drop_gv", "drop_gx")


def run_ablation_grid(cfg: ExperimentConfig):
    """Baseline + one-flag variants + the discrepancy-metric grid."""
    cells = [("baseline", cfg)]
    for flag in ABLATION_FLAGS:
        if flag == "drop_gv" and not cfg.aux_edge_path:
            continue
        if flag == "drop_gx" and cfg.knn_k == 0:
            continue
        cells.append((flag, replace(cfg, **{flag: True})))
    for metric in dc.DISCREPANCY_METRICS:
        if metric == cfg.disc_metric:
            continue
        cells.append((f"disc_{metric}", replace(cfg, disc_metric=metric)))

    reports = []
    for name, cell_cfg in cells:
        try:
            reports.append(run_training(cell_cfg, variant=name))
        except MecoleError as exc:
            logger.warning("ablation cell '%s' failed: %s", name, exc)
            failed = MetricsReport(seed=cell_cfg.seed,
                                   config=cell_cfg.to_dict(), variant=name,
                                   error=str(exc))
            reports.append(failed)
    return reports


def write_grid_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "accuracy", "nmi", "modularity",
                         "error"])
        for r in reports:
            writer.writerow([r.variant, r.seed, r.accuracy, r.nmi,
                             r.modularity, r.error or ""])
