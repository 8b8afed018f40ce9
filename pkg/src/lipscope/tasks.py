"""Synthetic tasks: embedded 2-d sinusoid regression and corrupted Gaussian blobs.

Every generator derives its randomness from numpy's PCG64 seeded through
``SeedSequence(seed).spawn``, with one child stream per concern in a
fixed documented order. Quantities that a frequency or corruption knob
does not conceptually touch (the latent sample, the embedding) come
from their own streams, so varying the knob leaves them bit-identical.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

BLOB_SEPARATION = 3.0  # distance between class means; Bayes accuracy ~ 99.9%
BLOB_SIGMA = 0.5  # per-axis standard deviation (covariance I/4)


@dataclass
class Dataset:
    """Inputs (N, n), targets (N,), and JSON-clean generation metadata."""

    X: np.ndarray
    y: np.ndarray
    meta: dict

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be (N, n) and y (N,), got %s, %s"
                             % (self.X.shape, self.y.shape))

    def __len__(self):
        return self.X.shape[0]


def _stream(seed_seq):
    return np.random.Generator(np.random.PCG64(seed_seq))


def random_isometry(n_hi, n_lo, seed):
    """Orthonormal (n_hi, n_lo) embedding: first columns of a random unitary.

    QR of a seeded standard Gaussian square matrix, with the R diagonal
    sign-fixed positive so the result is a deterministic function of the
    seed alone. Columns are orthonormal, so the map preserves pairwise
    distances exactly (up to rounding).
    """
    if not 1 <= n_lo <= n_hi:
        raise ValueError("need 1 <= n_lo <= n_hi, got %d, %d" % (n_lo, n_hi))
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = _stream(seed)
    G = rng.normal(size=(n_hi, n_hi))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    return Q[:, :n_lo]


def sinusoid_labels(z, frequency):
    """Product-of-cosines target on the latent square."""
    z = np.asarray(z, dtype=np.float64)
    return np.cos(2.0 * np.pi * frequency * z[:, 0]) * np.cos(2.0 * np.pi * frequency * z[:, 1])


def gen_sinusoid(n_points, frequency, seed, embed_dim=10):
    """Latent uniform sample on [-1, 1]^2, embedded isometrically.

    Stream order: child 0 draws the latent points, child 1 seeds the
    embedding. The frequency only enters the labels, so two datasets
    with the same seed and different frequencies share the exact same
    latent sample and embedding.
    """
    if n_points < 1:
        raise ValueError("n_points must be positive")
    if embed_dim < 2:
        raise ValueError("embed_dim must be >= 2")
    children = np.random.SeedSequence(seed).spawn(2)
    z = _stream(children[0]).uniform(-1.0, 1.0, size=(n_points, 2))
    embed = random_isometry(embed_dim, 2, children[1])
    X = z @ embed.T
    y = sinusoid_labels(z, frequency)
    meta = {
        "kind": "sinusoid",
        "n_points": int(n_points),
        "frequency": float(frequency),
        "seed": int(seed),
        "embed_dim": int(embed_dim),
        "embedding": embed.tolist(),
    }
    return Dataset(X, y, meta)


def latent_points(dataset):
    """Recover the latent 2-d sample of an embedded sinusoid dataset."""
    if dataset.meta.get("kind") != "sinusoid":
        raise ValueError("not a sinusoid dataset")
    embed = np.asarray(dataset.meta["embedding"], dtype=np.float64)
    return dataset.X @ embed


def gen_corrupted_blobs(n_points, corruption, seed, n_dim=10):
    """Two Gaussian class blobs with exactly floor(corruption * N) labels flipped.

    Means sit at -/+ (separation/2) along the first axis with
    covariance I/4; the separation of 3 puts the Bayes accuracy near
    99.9%, so desk-scale classifiers stay comfortably above the 90%
    floor at corruption 0. Stream order: child 0 class assignment,
    child 1 coordinates, child 2 flip choice.
    """
    if not 0.0 <= corruption <= 1.0:
        raise ValueError("corruption must lie in [0, 1]")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    children = np.random.SeedSequence(seed).spawn(3)
    classes = _stream(children[0]).integers(0, 2, size=n_points)
    X = _stream(children[1]).normal(scale=BLOB_SIGMA, size=(n_points, n_dim))
    X[:, 0] += (classes * 2 - 1) * (BLOB_SEPARATION / 2.0)
    y = classes.astype(np.float64)
    n_flip = int(np.floor(corruption * n_points))
    flipped = _stream(children[2]).choice(n_points, size=n_flip, replace=False)
    y[flipped] = 1.0 - y[flipped]
    meta = {
        "kind": "corrupted_blobs",
        "n_points": int(n_points),
        "corruption": float(corruption),
        "seed": int(seed),
        "n_dim": int(n_dim),
        "separation": BLOB_SEPARATION,
        "sigma": BLOB_SIGMA,
        "n_flipped": int(n_flip),
        "flipped_indices": sorted(int(i) for i in flipped),
    }
    return Dataset(X, y, meta)


TASK_GENERATORS = {"sinusoid": gen_sinusoid, "corrupted_blobs": gen_corrupted_blobs}


def save_dataset(dataset, directory):
    """Write dataset.csv (x_0..x_{n-1}, y header) and meta.json."""
    os.makedirs(directory, exist_ok=True)
    n = dataset.X.shape[1]
    with open(os.path.join(directory, "dataset.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_%d" % j for j in range(n)] + ["y"])
        for xi, yi in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(dataset.meta, fh, indent=1)
        fh.write("\n")


def load_dataset(directory):
    with open(os.path.join(directory, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(os.path.join(directory, "dataset.csv"), "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "y" or not all(h == "x_%d" % j for j, h in enumerate(header[:-1])):
            raise ValueError("unexpected dataset.csv header: %r" % header)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows, dtype=np.float64)
    return Dataset(arr[:, :-1], arr[:, -1], meta)
