"""Synthetic skeleton-sequence classification data.

A sample is a sequence of 3-D joint coordinates. Each joint trajectory is
summarized by temporal chunking: the frame range is split into M contiguous,
equally sized (within one frame) chunks, the coordinates inside each chunk
are averaged, and the M chunk means are concatenated. The resulting graph
signal has shape (3M, joints), one column per joint.

Classes are separated by construction: every (class, joint, axis) triple gets
its own sinusoid (frequency, phase, offset drawn once from the seeded
generator), and sequences add i.i.d. Gaussian noise on top. At zero noise a
nearest-prototype classifier on the chunked descriptors is exact.
"""

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class SkeletonSequence:
    """One labelled sequence: frames is (n_frames, joints, 3)."""

    joints: int
    frames: np.ndarray
    label: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.joints, 3):
            raise ValueError(
                f"frames must be (n_frames, {self.joints}, 3), got {self.frames.shape}"
            )


def temporal_chunking(seq, chunks):
    """Chunk-averaged descriptor of shape (3 * chunks, joints).

    Frames are assigned to ``chunks`` contiguous index ranges whose sizes
    differ by at most one; per joint, the chunk means are concatenated
    chunk-major: (chunk0_xyz, chunk1_xyz, ...).
    """
    n_frames = seq.frames.shape[0]
    if n_frames < chunks:
        raise ValueError(
            f"sequence has {n_frames} frames but chunking needs at least {chunks}"
        )
    pieces = np.array_split(seq.frames, chunks, axis=0)
    means = np.stack([p.mean(axis=0) for p in pieces])  # (chunks, joints, 3)
    return means.transpose(1, 0, 2).reshape(seq.joints, 3 * chunks).T


@dataclass(frozen=True)
class DataConfig:
    classes: int = 4
    sequences_per_class: int = 40
    joints: int = 8
    frames: int = 40
    chunks: int = 8
    noise_sigma: float = 0.05
    seed: int = 0
    topology: str = "chain"
    knn_k: int = 2

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.frames < self.chunks:
            raise ValueError("frames must be >= chunks")


@dataclass
class Dataset:
    classes: int
    joints: int
    chunks: int
    seed: int
    labels: np.ndarray
    signals: np.ndarray  # (n, 3*chunks, joints)
    adjacency: np.ndarray

    @property
    def signal_channels(self):
        return 3 * self.chunks


def build_adjacency(joints, topology="chain", coords=None, k=None):
    """Symmetric 0/1 adjacency with zero diagonal: chain, star, or knn(k)."""
    adj = np.zeros((joints, joints), dtype=np.float64)
    if topology == "chain":
        for j in range(joints - 1):
            adj[j, j + 1] = adj[j + 1, j] = 1.0
    elif topology == "star":
        for j in range(1, joints):
            adj[0, j] = adj[j, 0] = 1.0
    elif topology == "knn":
        if k is None or not (0 < k < joints):
            raise ValueError(f"knn needs 0 < k < {joints}, got {k!r}")
        pts = np.asarray(coords, dtype=np.float64)
        if pts.shape[0] != joints:
            raise ValueError("coords must provide one point per joint")
        dists = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        for j in range(joints):
            for i in np.argsort(dists[j], kind="stable")[:k]:
                adj[j, i] = adj[i, j] = 1.0
    else:
        raise ValueError(f"unknown topology {topology!r}")
    return adj


def class_prototypes(cfg, rng):
    """Sinusoid parameters per (class, joint, axis): freq, phase, offset."""
    shape = (cfg.classes, cfg.joints, 3)
    freq = rng.uniform(0.5, 3.0, size=shape)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    offset = rng.uniform(-1.0, 1.0, size=shape)
    return freq, phase, offset


def _trajectory(freq, phase, offset, n_frames):
    t = np.arange(n_frames, dtype=np.float64)[:, None, None] / n_frames
    return np.sin(2.0 * np.pi * freq[None] * t + phase[None]) + offset[None]


def gen_synthetic(cfg):
    """Deterministic synthetic dataset; identical seeds give identical bytes."""
    rng = np.random.default_rng(cfg.seed)
    freq, phase, offset = class_prototypes(cfg, rng)
    labels = []
    signals = []
    for label in range(cfg.classes):
        clean = _trajectory(freq[label], phase[label], offset[label], cfg.frames)
        for _ in range(cfg.sequences_per_class):
            noisy = clean + rng.normal(0.0, cfg.noise_sigma, size=clean.shape)
            seq = SkeletonSequence(cfg.joints, noisy, label)
            signals.append(temporal_chunking(seq, cfg.chunks))
            labels.append(label)
    if cfg.topology == "knn":
        coords = offset.mean(axis=0)  # per-joint 3-D anchor points
        adjacency = build_adjacency(cfg.joints, "knn", coords=coords, k=cfg.knn_k)
    else:
        adjacency = build_adjacency(cfg.joints, cfg.topology)
    return Dataset(
        classes=cfg.classes,
        joints=cfg.joints,
        chunks=cfg.chunks,
        seed=cfg.seed,
        labels=np.asarray(labels, dtype=np.int64),
        signals=np.stack(signals) if signals else np.zeros((0, 3 * cfg.chunks, cfg.joints)),
        adjacency=adjacency,
    )


def save_dataset(path, ds):
    """JSON persistence; float values survive a round trip exactly (repr)."""
    payload = {
        "classes": ds.classes,
        "J": ds.joints,
        "M": ds.chunks,
        "seed": ds.seed,
        "adjacency": ds.adjacency.astype(int).tolist(),
        "records": [
            {"label": int(y), "signal": sig.tolist()}
            for y, sig in zip(ds.labels, ds.signals)
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_dataset(path):
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as err:
        raise ValueError(f"malformed dataset file {path}: {err}") from err
    for key in ("classes", "J", "M", "seed", "adjacency", "records"):
        if key not in payload:
            raise ValueError(f"malformed dataset file {path}: missing key {key!r}")
    joints, chunks = int(payload["J"]), int(payload["M"])
    labels, signals = [], []
    for idx, rec in enumerate(payload["records"]):
        if "label" not in rec or "signal" not in rec:
            raise ValueError(f"malformed dataset file {path}: record {idx} incomplete")
        sig = np.asarray(rec["signal"], dtype=np.float64)
        if sig.shape != (3 * chunks, joints):
            raise ValueError(
                f"malformed dataset file {path}: record {idx} has shape "
                f"{sig.shape}, expected {(3 * chunks, joints)}"
            )
        labels.append(int(rec["label"]))
        signals.append(sig)
    return Dataset(
        classes=int(payload["classes"]),
        joints=joints,
        chunks=chunks,
        seed=int(payload["seed"]),
        labels=np.asarray(labels, dtype=np.int64),
        signals=np.stack(signals) if signals else np.zeros((0, 3 * chunks, joints)),
        adjacency=np.asarray(payload["adjacency"], dtype=np.float64),
    )


def split_train_test(ds, seed):
    """Stratified 50/50 split; per class, a seeded shuffle then an even cut."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == label)
        idx = idx[rng.permutation(len(idx))]
        half = len(idx) // 2
        train_idx.extend(idx[:half])
        test_idx.extend(idx[half:])
    train_idx = np.sort(np.asarray(train_idx))
    test_idx = np.sort(np.asarray(test_idx))
    return (
        (ds.signals[train_idx], ds.labels[train_idx]),
        (ds.signals[test_idx], ds.labels[test_idx]),
    )
