"""End-to-end training runs: annealed masked training plus final extraction.

A run has three phases. Warmup trains the plain masked network (no budget, no
consistency terms) so weight magnitudes become informative, mirroring the
pretrained baseline that magnitude pruning normally starts from. The pruning
phase then anneals the mask temperature while walking the budget target from
the post-warmup kept count down to the requested target along a cubic ramp;
the squeeze happens while the masks are still mobile. Finally the target
holds while annealing continues, which freezes the selection in place. The
learning rate adapts to the epoch loss throughout.

Runs with topological consistency enabled end by gating the binary masks with
the accessibility passes: the selected subnetwork is exactly the set of kept
connections on input-output paths, which is what the gated network computed
during training. The final report row carries the Table-2 column set:
realized pruning rate, TC flag, kept parameter count, % of accessible and
co-accessible connections, and mean class accuracy on the held-out split.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from . import topo
from .lossopt import (
    AdamState,
    LrState,
    adam_step,
    backward,
    clip_gradients,
    lr_update,
    make_topo_trace,
)
from .mask import ones_count
from .netgraph import (
    LayerSpec,
    NetworkSpec,
    forward_crisp,
    init_weights,
    lowered_masks,
    parameter_flags,
    total_prunable,
    unpruned_count,
)
from .data import split_train_test


@dataclass
class RunResult:
    spec: NetworkSpec
    weights: object
    masks: list
    metrics_rows: list
    topo_report: topo.TopoReport
    accuracy_percent: float
    kept: int
    realized_rate_percent: float
    seed: int
    wall_time_s: float


class NumericFailure(RuntimeError):
    """Raised when training hits non-finite values; carries the last finite state."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


METRICS_COLUMNS = (
    "epoch",
    "ce",
    "budget",
    "access_penalty",
    "total",
    "nu",
    "kept_count",
    "percent_ac",
)


def metrics_to_csv(rows):
    """Deterministic CSV text: repr for floats so equal runs give equal bytes."""
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        cells = []
        for col in METRICS_COLUMNS:
            value = row[col]
            cells.append(repr(value) if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def network_report(spec, masks, sets_fn=topo.reachable_sets_oracle):
    """Parameter-level consistency report for a full network.

    Lowers the per-layer masks onto the chain view, computes neuron
    reachability with ``sets_fn`` (the explicit oracle by default), and counts
    kept and accessible-and-co-accessible connections per prunable tensor.
    """
    low = lowered_masks(spec, masks)
    fwd, bwd = sets_fn(low)
    acc, coacc = parameter_flags(spec, masks, fwd, bwd)
    per_layer = []
    total_kept = 0
    ac_kept = 0
    for i, m in enumerate(masks):
        kept = int(np.count_nonzero(m))
        ac = int(np.count_nonzero((np.asarray(m) != 0.0) & acc[i] & coacc[i]))
        per_layer.append({"layer": i, "kept": kept, "ac": ac})
        total_kept += kept
        ac_kept += ac
    percent = 100.0 if total_kept == 0 else 100.0 * ac_kept / total_kept
    return topo.TopoReport(total_kept, ac_kept, percent, per_layer)


def extract_network_consistent(spec, masks):
    """Gate parameter masks by the phi passes until nothing changes.

    Gating only removes connections; a single pass already leaves every
    surviving connection on a kept input-output path, so the loop is bounded
    by len(masks) + 1 purely defensively.
    """
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    for _ in range(len(masks) + 1):
        low = lowered_masks(spec, masks)
        fwd, bwd = topo.reachable_sets_phi(low)
        acc, coacc = parameter_flags(spec, masks, fwd, bwd)
        gated = [
            m * acc[i].astype(np.float64) * coacc[i].astype(np.float64)
            for i, m in enumerate(masks)
        ]
        if all(np.array_equal(a, b) for a, b in zip(gated, masks)):
            return masks
        masks = gated
    return masks


def _top_c_masks(soft, eligible, c):
    """Keep the c largest soft-mask entries among the eligible positions.

    Ties break by soft value then flat position, so the cut is deterministic.
    """
    values = np.concatenate([s.reshape(-1) for s in soft])
    allowed = np.concatenate([e.reshape(-1) for e in eligible])
    values = np.where(allowed, values, -np.inf)
    c = min(int(c), int(allowed.sum()))
    keep = np.zeros(values.size, dtype=np.float64)
    if c > 0:
        order = np.argsort(-values, kind="stable")
        keep[order[:c]] = 1.0
    masks, lo = [], 0
    for s in soft:
        masks.append(keep[lo : lo + s.size].reshape(s.shape))
        lo += s.size
    return masks


def extract_at_budget(spec, weights, t, c, tc_enabled, threshold=0.5):
    """Crisp the soft masks to exactly the budget: the magnitude-pruning cut.

    Keeps the c connections with the largest soft mask values. With
    topological consistency the cut is refilled iteratively: connections that
    end up off every input-output path are ruled out and the next-ranked
    eligible ones take their place, until the kept set is consistent (the
    eligible pool shrinks every round, so this terminates). Without TC the
    single rank cut is final.
    """
    soft = weights.soft_masks(t)
    eligible = [np.ones(s.shape, dtype=bool) for s in soft]
    masks = _top_c_masks(soft, eligible, c)
    if not tc_enabled:
        return masks
    while True:
        low = lowered_masks(spec, masks)
        fwd, bwd = topo.reachable_sets_phi(low)
        acc, coacc = parameter_flags(spec, masks, fwd, bwd)
        dead = [
            (m != 0.0) & ~(a & co) for m, a, co in zip(masks, acc, coacc)
        ]
        if not any(d.any() for d in dead):
            return masks
        eligible = [e & ~d for e, d in zip(eligible, dead)]
        masks = _top_c_masks(soft, eligible, c)


def prepare_inputs(spec, signals):
    """Adapt (n, channels, nodes) signals to the first layer's input shape."""
    signals = np.asarray(signals, dtype=np.float64)
    first = spec.layers[0]
    if first.kind == "gcn_block":
        return signals
    return signals.reshape(signals.shape[0], -1)


def mean_class_accuracy(logits, labels):
    """Average of per-class accuracies over the classes present, in percent."""
    preds = np.argmax(logits, axis=1)
    accs = [
        float(np.mean(preds[labels == label] == label))
        for label in np.unique(labels)
    ]
    return 100.0 * float(np.mean(accs))


def _epoch_settings(cfg, epoch, warm_cfg, c_start):
    """Per-epoch temperature and effective config for the three-phase protocol.

    Warmup trains the plain masked network at the initial temperature; the
    pruning phase anneals the temperature and walks the budget target from
    the post-warmup kept count down to the final target along a cubic ramp,
    after which the target holds while annealing continues to polarize the
    masks.
    """
    if epoch < cfg.warmup_epochs:
        return cfg.anneal.t0, warm_cfg
    t = cfg.anneal.temperature(epoch - cfg.warmup_epochs)
    if cfg.target_kept is None or c_start is None:
        return t, cfg
    f = min(1.0, (epoch - cfg.warmup_epochs + 1) / cfg.ramp_epochs)
    c_eff = cfg.target_kept + (c_start - cfg.target_kept) * (1.0 - f) ** 3
    return t, replace(cfg, target_kept=c_eff)


def run_training(spec, dataset, cfg, seed):
    """One deterministic training run; returns metrics, masks, and the report row."""
    start = time.monotonic()
    seq = np.random.SeedSequence(seed)
    split_rng, init_rng, shuffle_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    (x_tr, y_tr), (x_te, y_te) = split_train_test(dataset, split_rng)
    x_tr = prepare_inputs(spec, x_tr)
    x_te = prepare_inputs(spec, x_te)
    weights = init_weights(spec, init_rng, adjacency=dataset.adjacency)
    adam = AdamState.for_weights(weights)
    lr_state = LrState(cfg.lr0)
    warm_cfg = replace(cfg, target_kept=None, access_weight=0.0, tc_enabled=False)
    rows = []
    n_train = len(y_tr)
    if n_train == 0:
        raise ValueError("training split is empty")
    c_start = None
    for epoch in range(cfg.epochs):
        if epoch >= cfg.warmup_epochs and c_start is None:
            c_start = unpruned_count(weights, cfg.anneal.temperature(0))
        t, ecfg = _epoch_settings(cfg, epoch, warm_cfg, c_start)
        trace = None
        if ecfg.tc_enabled and ecfg.topo_refresh == "epoch":
            trace = make_topo_trace(weights, t, ecfg)
        order = shuffle_rng.permutation(n_train)
        sums = np.zeros(4)
        try:
            for lo in range(0, n_train, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                batch = (x_tr[idx], y_tr[idx])
                grads, bd = backward(batch, weights, t, ecfg, trace=trace)
                grads = clip_gradients(grads, cfg.clip_norm)
                adam_step(weights, grads, adam, lr_state.nu, beta1=cfg.momentum)
                sums += len(idx) * np.array(
                    [bd.ce, bd.budget, bd.access_penalty, bd.total]
                )
        except FloatingPointError as err:
            partial = _finalize(
                spec, weights, cfg, rows, x_te, y_te, seed, start,
                epoch_for_temperature=max(epoch - cfg.warmup_epochs - 1, 0),
            )
            raise NumericFailure(str(err), partial) from err
        ce, budget, access, total = (sums / n_train).tolist()
        masks_now = weights.crisp_masks(t, cfg.binarize_threshold)
        report_now = network_report(spec, masks_now)
        rows.append(
            {
                "epoch": epoch,
                "ce": ce,
                "budget": budget,
                "access_penalty": access,
                "total": total,
                "nu": lr_state.nu,
                "kept_count": report_now.total_kept,
                "percent_ac": report_now.percent_ac,
            }
        )
        lr_state = lr_update(lr_state, total)
    return _finalize(
        spec, weights, cfg, rows, x_te, y_te, seed, start,
        epoch_for_temperature=cfg.epochs - cfg.warmup_epochs - 1,
    )


def _finalize(spec, weights, cfg, rows, x_te, y_te, seed, start, epoch_for_temperature):
    t_final = cfg.anneal.temperature(epoch_for_temperature)
    if cfg.target_kept is not None:
        masks = extract_at_budget(
            spec, weights, t_final, round(cfg.target_kept), cfg.tc_enabled,
            cfg.binarize_threshold,
        )
    else:
        masks = weights.crisp_masks(t_final, cfg.binarize_threshold)
        if cfg.tc_enabled:
            masks = extract_network_consistent(spec, masks)
    report = network_report(spec, masks)
    if len(y_te):
        logits = forward_crisp(weights, masks, x_te)[-1]
        accuracy = mean_class_accuracy(logits, y_te)
    else:
        accuracy = float("nan")
    kept = ones_count(masks)
    total = total_prunable(spec)
    return RunResult(
        spec=spec,
        weights=weights,
        masks=masks,
        metrics_rows=rows,
        topo_report=report,
        accuracy_percent=accuracy,
        kept=kept,
        realized_rate_percent=100.0 * (1.0 - kept / total),
        seed=seed,
        wall_time_s=time.monotonic() - start,
    )


def spec_to_dict(spec):
    layers = []
    for layer in spec.layers:
        d = {
            "kind": layer.kind,
            "in_dim": layer.in_dim,
            "out_dim": layer.out_dim,
            "activation": layer.activation,
        }
        if layer.kind == "gcn_block":
            d.update(heads=layer.heads, nodes=layer.nodes, channels=layer.channels)
        layers.append(d)
    return {"layers": layers, "freeze_attention": spec.freeze_attention}


def spec_from_dict(d):
    layers = [
        LayerSpec(
            kind=l["kind"],
            in_dim=l["in_dim"],
            out_dim=l["out_dim"],
            activation=l["activation"],
            heads=l.get("heads"),
            nodes=l.get("nodes"),
            channels=l.get("channels"),
        )
        for l in d["layers"]
    ]
    return NetworkSpec(tuple(layers), freeze_attention=d.get("freeze_attention", False))


def build_checkpoint(result, cfg):
    weights = result.weights
    layers = []
    for i, layer in enumerate(result.spec.layers):
        entry = {"w": weights.tensors[i].tolist()}
        if weights.attention[i] is not None:
            entry["a"] = weights.attention[i].tolist()
        layers.append(entry)
    return {
        "spec": spec_to_dict(result.spec),
        "weights": layers,
        "crisp_masks": [m.tolist() for m in result.masks],
        "topo_report": result.topo_report.to_dict(),
        "rng_seed": result.seed,
        "binarize_threshold": cfg.binarize_threshold,
        "tc_enabled": cfg.tc_enabled,
    }


def load_checkpoint_masks(payload):
    """Masks and spec from a checkpoint dict, with shape validation."""
    spec = spec_from_dict(payload["spec"])
    masks = [np.asarray(m, dtype=np.float64) for m in payload["crisp_masks"]]
    if len(masks) != len(spec.layers):
        raise ValueError("checkpoint mask count does not match its layer count")
    for i, layer in enumerate(spec.layers):
        want = (
            (layer.heads, layer.in_dim, layer.channels)
            if layer.kind == "gcn_block"
            else (layer.in_dim, layer.out_dim)
        )
        if masks[i].shape != want:
            raise ValueError(
                f"checkpoint mask {i} has shape {masks[i].shape}, expected {want}"
            )
    return spec, masks


def report_row(result, tc_enabled, config_hash=""):
    return {
        "pruning_rate_percent": result.realized_rate_percent,
        "tc_enabled": bool(tc_enabled),
        "parameter_count": result.kept,
        "percent_ac": result.topo_report.percent_ac,
        "accuracy_percent": result.accuracy_percent,
        "seed": result.seed,
        "config_hash": config_hash,
        "wall_time_s": result.wall_time_s,
    }
