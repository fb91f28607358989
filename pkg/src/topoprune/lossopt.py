"""Training objective, its gradient, and the optimizer.

The objective has three terms: cross entropy of the masked (optionally
gated) network, a squared budget penalty pulling the soft kept-connection
count toward a target, and - when topological consistency is enabled - a
penalty on the soft mass of kept connections that are not on any
input-to-output path.

The gradient accumulates three paths per weight tensor: directly through the
network, through the accessibility pass, and through the co-accessibility
pass. Gradients cross each Heaviside with a straight-through estimator: the
forward pass keeps the exact step function (computed on binarized masks)
while the backward pass substitutes the sigmoid's derivative. ``mode =
"smooth"`` instead replaces every step with an actual sigmoid and feeds the
recursions the soft masks themselves, which makes the total loss a smooth
function of the weights; the analytic gradient is validated against central
finite differences in that mode.
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import as_flat64, kernels
from .mask import AnnealSchedule, binarize, psi_apply, psi_grad
from .netgraph import forward_effective, gates_from_topo
from .topo import TopoState


@dataclass(frozen=True)
class PruneConfig:
    """Knobs for one pruning run.

    ``target_kept`` is the absolute budget of kept connections (None disables
    the budget term); ``budget_weight`` and ``access_weight`` scale the budget
    and dead-connection penalties.
    """

    target_kept: float | None = None
    budget_weight: float = 10.0
    access_weight: float = 1.0
    tc_enabled: bool = True
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    binarize_threshold: float = 0.5
    epochs: int = 460
    warmup_epochs: int = 60
    ramp_epochs: int = 140
    batch_size: int = 64
    lr0: float = 0.01
    momentum: float = 0.9
    ste_slope: float = 1.0
    clip_norm: float = 10.0
    crisp_budget: bool = True
    gated_budget: bool = True
    budget_deadband: float = 0.5
    topo_refresh: str = "epoch"

    def __post_init__(self):
        if self.target_kept is not None and self.target_kept < 0:
            raise ValueError("target_kept must be >= 0")
        if self.budget_weight < 0 or self.access_weight < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.warmup_epochs < 0 or self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs)")
        if self.ramp_epochs < 1:
            raise ValueError("ramp_epochs must be >= 1")
        if self.topo_refresh not in ("step", "epoch"):
            raise ValueError("topo_refresh must be 'step' or 'epoch'")


@dataclass
class LossBreakdown:
    """Weighted loss terms; total = ce + budget + access_penalty."""

    ce: float
    budget: float
    access_penalty: float
    total: float


@dataclass
class LrState:
    """Loss-adaptive learning rate: x0.99 when the loss rose, /0.99 when it fell."""

    nu: float
    prev_loss: float | None = None

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("learning rate must be positive")


def lr_update(state, new_loss):
    if state.prev_loss is None or new_loss == state.prev_loss:
        return LrState(state.nu, new_loss)
    if new_loss > state.prev_loss:
        return LrState(state.nu * 0.99, new_loss)
    return LrState(state.nu / 0.99, new_loss)


@dataclass
class Grads:
    tensors: list
    attention: list


def cross_entropy(logits, labels):
    """Mean negative log-softmax of the true class."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("cross_entropy needs a non-empty batch of logit rows")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    loss_sum, _ = kernels().softmax_xent(
        np.ascontiguousarray(logits), np.ascontiguousarray(labels)
    )
    return loss_sum / logits.shape[0]


def _step(x):
    return (x > 0.0).astype(np.float64)


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


class _Heaviside:
    """Forward step / surrogate-derivative pair used at every h node."""

    def __init__(self, mode, slope):
        self.mode = mode
        self.slope = slope

    def value(self, x):
        if self.mode == "ste":
            return _step(x)
        return _sigmoid(x / self.slope)

    def deriv(self, x):
        s = _sigmoid(x / self.slope)
        return s * (1.0 - s) / self.slope


class _TopoTrace:
    """Accessibility recursions over the lowered mask chain, with preactivations."""

    def __init__(self, spec, recursion_masks, heav):
        self.spec = spec
        self.low = _lower_soft(spec, recursion_masks)
        n = len(self.low)
        self.r = [np.ones(self.low[0].shape[0])]
        self.a_pre = [None]
        for m in self.low:
            pre = m.T @ self.r[-1]
            self.a_pre.append(pre)
            self.r.append(heav.value(pre))
        self.l = [None] * (n + 1)
        self.b_pre = [None] * (n + 1)
        self.l[n] = np.ones(self.low[-1].shape[1])
        for i in range(n - 1, -1, -1):
            pre = self.low[i] @ self.l[i + 1]
            self.b_pre[i] = pre
            self.l[i] = heav.value(pre)
        first = spec.layers[0]
        if first.kind == "gcn_block":
            self.pool_pre = self.l[1].reshape(first.nodes, first.channels).sum(axis=0)
            self.pool = heav.value(self.pool_pre)
        else:
            self.pool_pre = None
            self.pool = None

    def gates(self):
        gates = []
        for i, layer in enumerate(self.spec.layers):
            if layer.kind == "gcn_block":
                g = np.outer(self.r[i], self.pool)
                gates.append(np.broadcast_to(g, (layer.heads,) + g.shape).copy())
            else:
                gates.append(np.outer(self.r[i], self.l[i + 1]))
        return gates

    def state(self):
        return TopoState(list(self.r), list(self.l))


def _lower_soft(spec, masks):
    """Chain-of-matrices view of per-layer recursion masks (values kept soft).

    A gcn_block contributes the head-sum of its filter masks tiled across
    nodes: the step of a positive sum equals the OR over heads on crisp
    masks and stays differentiable on soft ones.
    """
    low = []
    for layer, m in zip(spec.layers, masks):
        if layer.kind == "gcn_block":
            channel = np.asarray(m, dtype=np.float64).sum(axis=0)
            low.append(np.tile(channel, (1, layer.nodes)))
        else:
            low.append(np.asarray(m, dtype=np.float64))
    return low


def _raise_lowered_grad(spec, layer_index, d_low):
    """Invert ``_lower_soft`` for gradients: sum tiled copies, share over heads."""
    layer = spec.layers[layer_index]
    if layer.kind == "gcn_block":
        d_channel = d_low.reshape(layer.in_dim, layer.nodes, layer.channels).sum(axis=1)
        return np.broadcast_to(d_channel, (layer.heads,) + d_channel.shape).copy()
    return d_low


def make_topo_trace(weights, t, cfg, mode="ste"):
    """Accessibility recursions for the current weights, reusable across steps."""
    heav = _Heaviside(mode, cfg.ste_slope)
    soft = weights.soft_masks(t)
    if mode == "ste":
        recursion = [binarize(s, cfg.binarize_threshold) for s in soft]
    else:
        recursion = soft
    return _TopoTrace(weights.spec, recursion, heav)


def _evaluate(weights, batch, t, cfg, mode, want_grads, want_paths=False, trace=None):
    """Shared forward/backward engine for total_loss and backward."""
    spec = weights.spec
    x, labels = batch
    labels = np.asarray(labels, dtype=np.int64)
    heav = _Heaviside(mode, cfg.ste_slope)
    soft = weights.soft_masks(t)

    gates = None
    if cfg.tc_enabled:
        if trace is None:
            trace = make_topo_trace(weights, t, cfg, mode)
        gates = trace.gates()

    eff = []
    for i, w in enumerate(weights.tensors):
        e = w * soft[i]
        if gates is not None:
            e = e * gates[i]
        eff.append(e)
    acts, caches = forward_effective(weights, x, eff, with_cache=True)
    logits = acts[-1]
    if labels.shape[0] != logits.shape[0]:
        raise ValueError("batch inputs and labels disagree in length")
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    loss_sum, dlogits = kernels().softmax_xent(
        np.ascontiguousarray(logits), np.ascontiguousarray(labels)
    )
    batch_n = logits.shape[0]
    ce = loss_sum / batch_n

    # The budget counts the crisped masks in ste mode (straight-through
    # backward: d count / d soft = 1), so its residual is the realized kept
    # count; smooth mode keeps the soft mass so the loss stays differentiable
    # end to end for the finite-difference check.
    if mode == "ste" and cfg.crisp_budget:
        count_masks = [binarize(s, cfg.binarize_threshold) for s in soft]
    else:
        count_masks = soft
    # With TC, Eq-41-style gated counting and plain counting agree at the
    # consistent optimum (the access term drives their gap to zero); the
    # plain count is the stabler control signal because one mask flip moves
    # it by one, never by a whole path bundle.
    if cfg.tc_enabled and cfg.gated_budget:
        count = sum(float(np.sum(s * g)) for s, g in zip(count_masks, gates))
    else:
        count = sum(float(np.sum(s)) for s in count_masks)
    if cfg.target_kept is not None:
        raw = count - cfg.target_kept
        # the crisp count is integer valued: residuals below half a
        # connection are on target and exert no force
        residual = np.sign(raw) * max(0.0, abs(raw) - cfg.budget_deadband)
        budget = cfg.budget_weight * residual * residual
    else:
        residual = 0.0
        budget = 0.0
    if cfg.tc_enabled:
        # dead-connection mass stays on the soft masks: it is a training
        # signal, not a count
        access = cfg.access_weight * sum(
            float(np.sum(s * (1.0 - g))) for s, g in zip(soft, gates)
        )
    else:
        access = 0.0
    breakdown = LossBreakdown(ce, budget, access, ce + budget + access)
    if not want_grads:
        return breakdown, None, None

    n_layers = len(spec.layers)
    d_eff = [None] * n_layers
    d_att = [None] * n_layers
    delta = dlogits / batch_n
    for i in range(n_layers - 1, -1, -1):
        layer = spec.layers[i]
        cache = caches[i]
        z = cache[-1]
        dz = delta * (z > 0.0) if layer.activation == "relu" else delta
        if layer.kind == "gcn_block":
            ut, au = cache[0], cache[1]
            dz3 = dz.reshape(dz.shape[0], layer.nodes, layer.channels)
            d_eff[i] = np.einsum("kbns,bnc->ksc", au, dz3)
            if not spec.freeze_attention:
                proj = np.einsum("bns,ksc->kbnc", ut, eff[i])
                d_att[i] = np.einsum("bnc,kbmc->knm", dz3, proj)
            delta = None  # gcn_block only occurs first
        else:
            h_in = cache[0]
            d_eff[i] = h_in.T @ dz
            delta = dz @ eff[i].T

    w_budget = 2.0 * cfg.budget_weight * residual if cfg.target_kept is not None else 0.0
    d_soft = [np.zeros_like(s) for s in soft]
    d_gate = [np.zeros_like(g) for g in gates] if gates is not None else None
    direct = [np.zeros_like(w) for w in weights.tensors]
    for i, w in enumerate(weights.tensors):
        g = gates[i] if gates is not None else 1.0
        direct[i] += d_eff[i] * soft[i] * g
        d_soft[i] += d_eff[i] * w * g
        if cfg.tc_enabled:
            if cfg.gated_budget:
                d_soft[i] += w_budget * gates[i]  # STE through any crisping
                d_gate[i] += w_budget * count_masks[i]
            else:
                d_soft[i] += w_budget
            d_soft[i] += cfg.access_weight * (1.0 - gates[i])
            d_gate[i] += d_eff[i] * w * soft[i]
            d_gate[i] -= cfg.access_weight * soft[i]
        else:
            d_soft[i] += w_budget

    path_r = [np.zeros_like(w) for w in weights.tensors]
    path_l = [np.zeros_like(w) for w in weights.tensors]
    if cfg.tc_enabled:
        n_neuron = n_layers + 1
        r_bar = [np.zeros_like(trace.r[i]) for i in range(n_neuron)]
        l_bar = [np.zeros_like(trace.l[i]) for i in range(n_neuron)]
        d_pool = None
        for i, layer in enumerate(spec.layers):
            if layer.kind == "gcn_block":
                dsum = d_gate[i].sum(axis=0)
                r_bar[i] += dsum @ trace.pool
                d_pool = dsum.T @ trace.r[i]
            else:
                r_bar[i] += d_gate[i] @ trace.l[i + 1]
                l_bar[i + 1] += d_gate[i].T @ trace.r[i]
        if d_pool is not None:
            d_pool_pre = d_pool * heav.deriv(trace.pool_pre)
            first = spec.layers[0]
            l_bar[1] += np.tile(d_pool_pre, first.nodes)

        # accessibility chain, output side toward the input
        for i in range(n_layers - 1, 0, -1):
            a_bar = r_bar[i] * heav.deriv(trace.a_pre[i])
            d_low = np.outer(trace.r[i - 1], a_bar)
            path_r[i - 1] += _raise_lowered_grad(spec, i - 1, d_low)
            r_bar[i - 1] += trace.low[i - 1] @ a_bar

        # co-accessibility chain, input side toward the output
        for i in range(1, n_layers):
            b_bar = l_bar[i] * heav.deriv(trace.b_pre[i])
            d_low = np.outer(b_bar, trace.l[i + 1])
            path_l[i] += _raise_lowered_grad(spec, i, d_low)
            l_bar[i + 1] += trace.low[i].T @ b_bar

    grads_t = []
    for i, w in enumerate(weights.tensors):
        pg = psi_grad(w, t, name=f"layer {i} weights")
        g_direct = direct[i] + d_soft[i] * pg
        g_r = path_r[i] * pg
        g_l = path_l[i] * pg
        total = g_direct + g_r + g_l
        if not np.all(np.isfinite(total)):
            raise FloatingPointError(f"non-finite gradient at layer {i}")
        grads_t.append((g_direct, g_r, g_l) if want_paths else total)
    grads = Grads(grads_t, d_att)
    return breakdown, grads, trace


def total_loss(batch, weights, t, cfg, mode="ste", trace=None):
    """Three-term loss of the current weights on one batch."""
    breakdown, _, _ = _evaluate(
        weights, batch, t, cfg, mode, want_grads=False, trace=trace
    )
    return breakdown


def backward(batch, weights, t, cfg, mode="ste", return_paths=False, trace=None):
    """Loss and gradients for every weight tensor (and attention head).

    With ``return_paths`` each tensor gradient is a (direct, via_phi_r,
    via_phi_l) triple instead of their sum. A precomputed ``trace`` freezes
    the accessibility recursions (per-epoch refresh); by default they are
    recomputed from the current weights.
    """
    breakdown, grads, _ = _evaluate(
        weights, batch, t, cfg, mode, want_grads=True, want_paths=return_paths,
        trace=trace,
    )
    return grads, breakdown


def budget_loss(weights, t, c, topo=None):
    """Unweighted squared budget residual (count - c)^2.

    The count is the plain soft mass of all masks, or the phi-gated mass when
    a TopoState over the lowered chain is supplied.
    """
    if c < 0:
        raise ValueError("budget target must be >= 0")
    soft = weights.soft_masks(t)
    if topo is None:
        count = sum(float(np.sum(s)) for s in soft)
    else:
        gates = gates_from_topo(weights.spec, topo)
        count = sum(float(np.sum(s * g)) for s, g in zip(soft, gates))
    return (count - c) ** 2


def access_penalty(weights, t, topo):
    """Unweighted soft mass of kept-but-not-accessible/co-accessible connections."""
    soft = weights.soft_masks(t)
    gates = gates_from_topo(weights.spec, topo)
    return sum(float(np.sum(s * (1.0 - g))) for s, g in zip(soft, gates))


@dataclass
class AdamState:
    m_tensors: list
    v_tensors: list
    m_attention: list
    v_attention: list
    step_count: int = 0

    @classmethod
    def for_weights(cls, weights):
        return cls(
            [np.zeros_like(w) for w in weights.tensors],
            [np.zeros_like(w) for w in weights.tensors],
            [np.zeros_like(a) if a is not None else None for a in weights.attention],
            [np.zeros_like(a) if a is not None else None for a in weights.attention],
        )


def global_grad_norm(grads):
    total = 0.0
    for g in list(grads.tensors) + list(grads.attention):
        if g is not None:
            total += float(np.sum(np.asarray(g) ** 2))
    return float(np.sqrt(total))


def clip_gradients(grads, max_norm):
    """Scale all gradients down so the global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        grads = Grads(
            [g * scale for g in grads.tensors],
            [g * scale if g is not None else None for g in grads.attention],
        )
    return grads


def _adam_update(ker, w, g, m, v, step, lr, beta1, beta2, eps):
    fw, _ = as_flat64(w)
    fm, _ = as_flat64(m)
    fv, _ = as_flat64(v)
    ker.adam_step(fw, as_flat64(g)[0], fm, fv, step, lr, beta1, beta2, eps)
    w[...] = fw.reshape(w.shape)
    m[...] = fm.reshape(m.shape)
    v[...] = fv.reshape(v.shape)


def adam_step(weights, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update; deterministic given gradient order."""
    ker = kernels()
    state.step_count += 1
    for w, g, m, v in zip(
        weights.tensors, grads.tensors, state.m_tensors, state.v_tensors
    ):
        _adam_update(ker, w, g, m, v, state.step_count, lr, beta1, beta2, eps)
    for w, g, m, v in zip(
        weights.attention, grads.attention, state.m_attention, state.v_attention
    ):
        if w is None or g is None:
            continue
        _adam_update(ker, w, g, m, v, state.step_count, lr, beta1, beta2, eps)
    return weights
