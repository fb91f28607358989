"""Layered network definition and masked forward evaluation.

A network is a chain of layers, each owning a latent weight tensor that is
multiplied by its own soft mask on every forward pass. Two layer kinds exist:

* ``dense``     - weight (in_dim, out_dim), out = f(x @ W_eff)
* ``gcn_block`` - K attention heads A^k (nodes, nodes) aggregating a graph
  signal U (channels, nodes), convolved by K filter banks W^k
  (channels, out_channels): out = f(sum_k A^k U^T W^k), flattened to
  nodes*out_channels. Only the filter banks are prunable; the attention
  matrices are trainable but never masked. A gcn_block may only appear as
  the first layer.

Biases are omitted throughout, which keeps the reachability semantics of a
connection identical to the reachability of its weight entry.
"""

from dataclasses import dataclass, field

import numpy as np

from .mask import binarize, psi_apply

ACTIVATIONS = ("relu", "identity", "softmax_logits")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    activation: str
    heads: int | None = None
    nodes: int | None = None
    channels: int | None = None


def dense(in_dim, out_dim, activation="relu"):
    return LayerSpec("dense", int(in_dim), int(out_dim), activation)


def gcn_block(channels_in, heads, nodes, channels_out, activation="relu"):
    """GCN layer spec; its flattened output width is nodes * channels_out."""
    return LayerSpec(
        "gcn_block",
        int(channels_in),
        int(nodes) * int(channels_out),
        activation,
        heads=int(heads),
        nodes=int(nodes),
        channels=int(channels_out),
    )


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    freeze_attention: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 2:
            raise ValueError("network depth must be at least 2 layers")
        for idx, layer in enumerate(self.layers):
            if layer.kind not in ("dense", "gcn_block"):
                raise ValueError(f"layer {idx}: unknown kind {layer.kind!r}")
            if layer.activation not in ACTIVATIONS:
                raise ValueError(
                    f"layer {idx}: unknown activation {layer.activation!r}"
                )
            if layer.kind == "gcn_block":
                if idx != 0:
                    raise ValueError(
                        f"layer {idx}: gcn_block is only supported as the first layer"
                    )
                if not (layer.heads and layer.heads >= 1):
                    raise ValueError("gcn_block needs at least one head")
                if layer.out_dim != layer.nodes * layer.channels:
                    raise ValueError(
                        "gcn_block out_dim must equal nodes * channels"
                    )
            if idx > 0 and layer.in_dim != self.layers[idx - 1].out_dim:
                raise ValueError(
                    f"layer {idx}: in_dim {layer.in_dim} does not chain with "
                    f"previous out_dim {self.layers[idx - 1].out_dim}"
                )
            terminal = idx == len(self.layers) - 1
            if terminal and layer.activation != "softmax_logits":
                raise ValueError("terminal layer must use softmax_logits")
            if not terminal and layer.activation == "softmax_logits":
                raise ValueError("softmax_logits is only valid on the terminal layer")

    @property
    def widths(self):
        """Neuron-layer widths, input first (gcn counts flattened nodes*channels)."""
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    @property
    def num_classes(self):
        return self.layers[-1].out_dim


@dataclass
class MaskedWeights:
    """Latent weight tensors per layer plus (for gcn) attention heads.

    ``tensors[i]`` is (in_dim, out_dim) for dense layers and
    (heads, in_channels, out_channels) for a gcn_block; ``attention[i]`` is
    (heads, nodes, nodes) for a gcn_block and None otherwise.
    """

    spec: NetworkSpec
    tensors: list = field(default_factory=list)
    attention: list = field(default_factory=list)

    def copy(self):
        return MaskedWeights(
            self.spec,
            [t.copy() for t in self.tensors],
            [a.copy() if a is not None else None for a in self.attention],
        )

    def prunable_total(self):
        return int(sum(t.size for t in self.tensors))

    def soft_masks(self, t):
        return [
            psi_apply(w, t, name=f"layer {i} weights")
            for i, w in enumerate(self.tensors)
        ]

    def crisp_masks(self, t, threshold=0.5):
        return [binarize(s, threshold) for s in self.soft_masks(t)]


def total_prunable(spec):
    total = 0
    for layer in spec.layers:
        if layer.kind == "gcn_block":
            total += layer.heads * layer.in_dim * layer.channels
        else:
            total += layer.in_dim * layer.out_dim
    return total


def normalized_adjacency(adj):
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 of a 0/1 adjacency."""
    a = np.asarray(adj, dtype=np.float64) + np.eye(adj.shape[0])
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def init_weights(spec, rng, adjacency=None):
    """Uniform [-a, a) init with a = sqrt(6 / (fan_in + fan_out)) per tensor.

    Attention heads start from powers of the normalized adjacency (identity
    when no graph is given), plus a small symmetry-breaking perturbation when
    they are trainable.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    tensors, attention = [], []
    for layer in spec.layers:
        if layer.kind == "gcn_block":
            a = np.sqrt(6.0 / (layer.in_dim + layer.channels))
            tensors.append(
                rng.uniform(-a, a, size=(layer.heads, layer.in_dim, layer.channels))
            )
            if adjacency is not None:
                base = normalized_adjacency(adjacency)
            else:
                base = np.eye(layer.nodes)
            heads = np.stack(
                [np.linalg.matrix_power(base, k) for k in range(layer.heads)]
            )
            if not spec.freeze_attention:
                heads = heads + rng.uniform(-0.01, 0.01, size=heads.shape)
            attention.append(heads)
        else:
            a = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            tensors.append(rng.uniform(-a, a, size=(layer.in_dim, layer.out_dim)))
            attention.append(None)
    return MaskedWeights(spec, tensors, attention)


def _apply_activation(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z  # identity and softmax_logits both emit raw values


def gcn_block_forward(a_heads, u, w_heads, activation="identity"):
    """Multi-head aggregation convolution f(sum_k A^k U^T W^k).

    ``a_heads``: K matrices (nodes, nodes); ``u``: signal (channels, nodes)
    or a batch (batch, channels, nodes); ``w_heads``: K filter banks
    (channels, out_channels). Returns (nodes, out_channels) per sample.
    """
    a_heads = [np.asarray(a, dtype=np.float64) for a in a_heads]
    w_heads = [np.asarray(w, dtype=np.float64) for w in w_heads]
    if len(a_heads) != len(w_heads):
        raise ValueError(
            f"head count mismatch: {len(a_heads)} attention vs {len(w_heads)} filters"
        )
    u = np.asarray(u, dtype=np.float64)
    squeeze = u.ndim == 2
    if squeeze:
        u = u[None]
    ut = np.swapaxes(u, 1, 2)
    n = a_heads[0].shape[0]
    s = u.shape[1]
    z = None
    for k, (a, w) in enumerate(zip(a_heads, w_heads)):
        if a.shape != (n, n):
            raise ValueError(f"head {k}: attention shape {a.shape} != ({n}, {n})")
        if w.shape[0] != s:
            raise ValueError(
                f"head {k}: filter rows {w.shape[0]} != signal channels {s}"
            )
        zk = np.matmul(np.matmul(a, ut), w)
        z = zk if z is None else z + zk
    out = _apply_activation(activation, z)
    return out[0] if squeeze else out


def expected_input_shape(spec):
    first = spec.layers[0]
    if first.kind == "gcn_block":
        return (first.in_dim, first.nodes)
    return (first.in_dim,)


def _check_input(spec, x):
    x = np.asarray(x, dtype=np.float64)
    want = expected_input_shape(spec)
    if x.ndim == len(want):
        x = x[None]
    if x.shape[1:] != want:
        raise ValueError(
            f"layer 0: input shape {x.shape[1:]} does not match expected {want}"
        )
    return x


def forward_effective(weights, x, eff_tensors, with_cache=False):
    """Forward pass given already-assembled effective weight tensors.

    Returns the list of layerwise outputs [input, h1, ..., logits]; with
    ``with_cache`` also returns per-layer intermediates for backprop.
    """
    spec = weights.spec
    x = _check_input(spec, x)
    acts = [x]
    caches = []
    h = x
    for i, layer in enumerate(spec.layers):
        if layer.kind == "gcn_block":
            ut = np.swapaxes(h, 1, 2)  # (B, nodes, channels)
            au = np.stack([np.matmul(a, ut) for a in weights.attention[i]])
            z = np.einsum("kbns,ksc->bnc", au, eff_tensors[i])
            z = z.reshape(z.shape[0], layer.out_dim)
            cache = (ut, au)
        else:
            if h.shape[1] != layer.in_dim:
                raise ValueError(
                    f"layer {i}: input width {h.shape[1]} != in_dim {layer.in_dim}"
                )
            z = h @ eff_tensors[i]
            cache = (h,)
        out = _apply_activation(layer.activation, z)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out))[0]
            raise FloatingPointError(
                f"non-finite activation at layer {i}, batch index {int(bad[0])}"
            )
        acts.append(out)
        caches.append(cache + (z,))
        h = out
    if with_cache:
        return acts, caches
    return acts


def effective_tensors(weights, t, gates=None):
    """W .* psi_T(W), optionally further gated elementwise per layer."""
    eff = []
    for i, w in enumerate(weights.tensors):
        s = psi_apply(w, t, name=f"layer {i} weights")
        e = w * s
        if gates is not None and gates[i] is not None:
            e = e * gates[i]
        eff.append(e)
    return eff


def gates_from_topo(spec, topo):
    """Per-layer multiplicative gate arrays from accessibility vectors.

    ``topo`` holds one 0/1 vector per neuron layer of the lowered chain
    (see ``lowered_masks``). Dense layer i gets outer(phi_r[i], phi_l[i+1]);
    a gcn_block gets outer(phi_r[0], pool(phi_l[1])) shared across heads,
    where pool ORs the flattened per-node co-accessibility over nodes.
    """
    gates = []
    for i, layer in enumerate(spec.layers):
        r = np.asarray(topo.phi_r[i], dtype=np.float64)
        l = np.asarray(topo.phi_l[i + 1], dtype=np.float64)
        if layer.kind == "gcn_block":
            pool = (
                l.reshape(layer.nodes, layer.channels).sum(axis=0) > 0.0
            ).astype(np.float64)
            g = np.outer(r, pool)  # (channels_in, channels_out)
            gates.append(np.broadcast_to(g, (layer.heads,) + g.shape).copy())
        else:
            gates.append(np.outer(r, l))
    return gates


def forward_masked(weights, x, t, gating=None):
    """Masked forward pass: effective weight = W .* psi_T(W) [.* phi gates].

    ``gating`` is a TopoState over the lowered neuron layers or None.
    Returns layerwise activations, input first, logits last.
    """
    gates = gates_from_topo(weights.spec, gating) if gating is not None else None
    return forward_effective(weights, x, effective_tensors(weights, t, gates))


def forward_crisp(weights, masks, x):
    """Forward pass of the extracted subnetwork: effective weight = W .* mask."""
    eff = [w * m for w, m in zip(weights.tensors, masks)]
    return forward_effective(weights, x, eff)


def unpruned_count(weights, t):
    """Soft count of kept connections: total mass of all psi_T(W) entries."""
    return float(sum(np.sum(s) for s in weights.soft_masks(t)))


def lowered_masks(spec, masks):
    """Lower per-layer masks onto a plain chain of 2-D binary matrices.

    Dense masks pass through. A gcn_block becomes an (in_channels,
    nodes*out_channels) matrix: entry (i, (u, j)) is 1 iff any head keeps
    filter connection (i, j) - the dense aggregation never blocks
    reachability, so every node sees the same channel connectivity.
    """
    lowered = []
    for layer, m in zip(spec.layers, masks):
        if layer.kind == "gcn_block":
            channel = (np.asarray(m).sum(axis=0) > 0.0).astype(np.float64)
            tiled = np.tile(channel, (1, layer.nodes))
            lowered.append(tiled)
        else:
            lowered.append(np.asarray(m, dtype=np.float64))
    return lowered


def parameter_flags(spec, masks, fwd, bwd):
    """Map neuron-level reachability to per-parameter (acc, coacc) flags.

    ``fwd``/``bwd`` are boolean accessibility/co-accessibility vectors per
    lowered neuron layer. Flags have the same shapes as ``masks`` and are
    meaningful at kept positions; a gcn filter connection is co-accessible
    iff its output channel is co-accessible at any node.
    """
    acc, coacc = [], []
    for i, (layer, m) in enumerate(zip(spec.layers, masks)):
        r = np.asarray(fwd[i], dtype=bool)
        l = np.asarray(bwd[i + 1], dtype=bool)
        if layer.kind == "gcn_block":
            pool = l.reshape(layer.nodes, layer.channels).any(axis=0)
            acc.append(np.broadcast_to(r[None, :, None], m.shape).copy())
            coacc.append(np.broadcast_to(pool[None, None, :], m.shape).copy())
        else:
            acc.append(np.broadcast_to(r[:, None], m.shape).copy())
            coacc.append(np.broadcast_to(l[None, :], m.shape).copy())
    return acc, coacc
