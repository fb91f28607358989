"""Accessibility and co-accessibility over a chain of crisp masks.

All operations here work on a plain layered graph: a list of {0,1} matrices
with chained shapes, mask[i] connecting neuron layer i to layer i+1. A kept
connection (i, j) at layer l is *accessible* when neuron i can be reached
from some input neuron through kept connections, and *co-accessible* when
some output neuron can be reached from neuron j. Input neurons are accessible
and output neurons co-accessible by convention.

Three independent characterizations are implemented and cross-checked by the
test suite:

* ``phi_forward``         - bidirectional Heaviside passes (the supervisory
                            network semantics)
* ``sa_sc_products``      - prefix/suffix mask products with a positivity test
* ``reachability_oracle`` - explicit reachable-set propagation over adjacency
                            lists, kept deliberately loop-based and free of
                            the kernels used by the other two
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels


@dataclass
class TopoState:
    """Per-neuron-layer accessibility (phi_r) and co-accessibility (phi_l) vectors."""

    phi_r: list
    phi_l: list


@dataclass
class ConnectionFlags:
    """Per-connection accessible/co-accessible indicator arrays, shaped like the masks."""

    accessible: list
    coaccessible: list


@dataclass
class TopoReport:
    total_kept: int
    ac_kept: int
    percent_ac: float
    per_layer: list = field(default_factory=list)

    def to_dict(self):
        return {
            "total_kept": self.total_kept,
            "ac_kept": self.ac_kept,
            "percent_ac": self.percent_ac,
            "per_layer": self.per_layer,
        }


def _validate_chain(masks):
    if not masks:
        raise ValueError("mask chain is empty")
    mats = []
    for i, m in enumerate(masks):
        a = np.asarray(m, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"mask {i} is not a matrix")
        bad = (a != 0.0) & (a != 1.0)
        if np.any(bad):
            pos = tuple(int(v) for v in np.argwhere(bad)[0])
            raise ValueError(
                f"mask {i} has non-binary entry at {pos}; binarize soft masks first"
            )
        if i > 0 and a.shape[0] != mats[-1].shape[1]:
            raise ValueError(
                f"mask {i} rows {a.shape[0]} do not chain with previous "
                f"columns {mats[-1].shape[1]}"
            )
        mats.append(np.ascontiguousarray(a))
    return mats


def phi_forward(masks):
    """Bidirectional reachability passes over crisp masks.

    phi_r runs input to output from an all-ones seed, phi_l output to input;
    both apply the exact Heaviside h(x) = 1 iff x > 0 at every layer.
    """
    mats = _validate_chain(masks)
    ker = kernels()
    phi_r = [np.ones(mats[0].shape[0])]
    for m in mats:
        phi_r.append(ker.reach_forward(m, phi_r[-1]))
    phi_l = [np.ones(mats[-1].shape[1])]
    for m in reversed(mats):
        phi_l.append(ker.reach_backward(m, phi_l[-1]))
    phi_l.reverse()
    return TopoState(phi_r, phi_l)


def reachable_sets_phi(masks):
    state = phi_forward(masks)
    return (
        [v.astype(bool) for v in state.phi_r],
        [v.astype(bool) for v in state.phi_l],
    )


def sa_sc_products(masks):
    """Prefix products S_a and suffix products S_c of the mask chain.

    S_a[l] multiplies masks 0..l-1 (all-ones row for l = 0 by convention),
    S_c[l] multiplies masks l+1.. (all-ones column for the last layer).
    Products are taken in float64; only the zero pattern is meaningful.
    """
    mats = _validate_chain(masks)
    n = len(mats)
    sa = [np.ones((1, mats[0].shape[0]))]
    for i in range(1, n):
        sa.append(sa[-1] @ mats[i - 1] if i > 1 else mats[0].copy())
    sc = [None] * n
    sc[n - 1] = np.ones((mats[-1].shape[1], 1))
    for i in range(n - 2, -1, -1):
        sc[i] = mats[i + 1] @ sc[i + 1] if i < n - 2 else mats[n - 1].copy()
    return sa, sc


def reachable_sets_products(masks):
    """Neuron-level reachability derived from the S_a / S_c zero patterns."""
    mats = _validate_chain(masks)
    sa, sc = sa_sc_products(mats)
    fwd = [np.ones(mats[0].shape[0], dtype=bool)]
    for i in range(1, len(mats)):
        fwd.append(np.asarray(sa[i]).sum(axis=0) > 0.0)
    fwd.append(np.asarray(sa[-1] @ mats[-1]).sum(axis=0) > 0.0)
    bwd = [None] * (len(mats) + 1)
    bwd[len(mats)] = np.ones(mats[-1].shape[1], dtype=bool)
    for i in range(len(mats) - 1, 0, -1):
        bwd[i] = np.asarray(sc[i - 1]).sum(axis=1) > 0.0
    bwd[0] = np.asarray(mats[0] @ sc[0]).sum(axis=1) > 0.0
    return fwd, bwd


def reachable_sets_oracle(masks):
    """Explicit reachable-set propagation over adjacency lists.

    Reference implementation: plain Python loops over kept edges, no shared
    code with the phi passes or the matrix products.
    """
    mats = _validate_chain(masks)
    widths = [mats[0].shape[0]] + [m.shape[1] for m in mats]
    edges = []
    for m in mats:
        out_adj = [[] for _ in range(m.shape[0])]
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                if m[i, j] != 0.0:
                    out_adj[i].append(j)
        edges.append(out_adj)

    fwd = [np.zeros(w, dtype=bool) for w in widths]
    fwd[0][:] = True
    for layer, out_adj in enumerate(edges):
        reached = set()
        for i in range(widths[layer]):
            if fwd[layer][i]:
                for j in out_adj[i]:
                    reached.add(j)
        for j in reached:
            fwd[layer + 1][j] = True

    bwd = [np.zeros(w, dtype=bool) for w in widths]
    bwd[-1][:] = True
    for layer in range(len(edges) - 1, -1, -1):
        reaching = set()
        for i in range(widths[layer]):
            for j in edges[layer][i]:
                if bwd[layer + 1][j]:
                    reaching.add(i)
                    break
        for i in reaching:
            bwd[layer][i] = True
    return fwd, bwd


def connection_flags(masks, fwd, bwd):
    """Broadcast neuron-level reachability onto per-connection flag matrices."""
    mats = _validate_chain(masks)
    acc, coacc = [], []
    for i, m in enumerate(mats):
        r = np.asarray(fwd[i], dtype=bool)
        l = np.asarray(bwd[i + 1], dtype=bool)
        acc.append(np.broadcast_to(r[:, None], m.shape).copy())
        coacc.append(np.broadcast_to(l[None, :], m.shape).copy())
    return ConnectionFlags(acc, coacc)


def reachability_oracle(masks):
    """Per-connection A-C flags by explicit path search (the independent oracle)."""
    fwd, bwd = reachable_sets_oracle(masks)
    return connection_flags(masks, fwd, bwd)


def consistency_report(masks):
    """Aggregate the oracle's flags into kept / A-C counts per layer and overall.

    An empty network (nothing kept) reports percent_ac = 100 by convention.
    """
    mats = _validate_chain(masks)
    flags = reachability_oracle(mats)
    per_layer = []
    total_kept = 0
    ac_kept = 0
    for i, m in enumerate(mats):
        kept = int(np.count_nonzero(m))
        ac = int(
            np.count_nonzero(
                (m != 0.0) & flags.accessible[i] & flags.coaccessible[i]
            )
        )
        per_layer.append({"layer": i, "kept": kept, "ac": ac})
        total_kept += kept
        ac_kept += ac
    percent = 100.0 if total_kept == 0 else 100.0 * ac_kept / total_kept
    return TopoReport(total_kept, ac_kept, percent, per_layer)


def effective_mask(masks, topo):
    """Gate each mask by outer(phi_r[l], phi_l[l+1]): keep only A-C connections."""
    mats = _validate_chain(masks)
    out = []
    for i, m in enumerate(mats):
        gate = np.outer(topo.phi_r[i], topo.phi_l[i + 1])
        out.append(m * gate)
    return out


def extract_consistent(masks, max_rounds=None):
    """Iterate effective_mask until a fixpoint; gating only ever removes edges.

    One round already yields a consistent chain (every surviving edge lies on
    a full kept input-output path), so the loop exits after at most two
    passes; the bound is len(masks) + 1 for safety.
    """
    mats = _validate_chain(masks)
    rounds = max_rounds if max_rounds is not None else len(mats) + 1
    for _ in range(rounds):
        gated = effective_mask(mats, phi_forward(mats))
        if all(np.array_equal(a, b) for a, b in zip(gated, mats)):
            return mats
        mats = gated
    return mats
