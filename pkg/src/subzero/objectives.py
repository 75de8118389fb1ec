"""Objective functions for the optimization testbed.

Two families:

* Randomized quadratics ``L(theta) = 0.5 * theta^T H theta`` with
  synthetically generated block-diagonal PSD Hessians whose per-block
  spectra are controlled exactly (linearly decaying eigenvalues, or
  heterogeneous integer spectra around sampled reference levels).
* A small stochastic logistic-regression objective over two Gaussian
  clusters, used to exercise minibatch seeding end to end.

Objectives are immutable after construction and safe to evaluate from
concurrent workers.  Every evaluation that involves data sampling is a
pure function of ``(theta, batch_seed)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .linalg import SymMatrix, orthonormalize


@dataclass(frozen=True)
class HessianSpec:
    """Parameters of the linear-decay block Hessian generator."""

    dim: int
    rank: int  # nonzero eigenvalues per block
    num_blocks: int
    max_eigenvals: tuple  # one leading eigenvalue per block, all > 0
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "max_eigenvals", tuple(float(v) for v in self.max_eigenvals))
        if self.dim < 1 or self.num_blocks < 1:
            raise InputError("dim and num_blocks must be positive")
        if self.dim % self.num_blocks != 0:
            raise InputError(f"dim {self.dim} not divisible by num_blocks {self.num_blocks}")
        if not (1 <= self.rank <= self.dim // self.num_blocks):
            raise InputError(f"rank must be in [1, {self.dim // self.num_blocks}], got {self.rank}")
        if len(self.max_eigenvals) != self.num_blocks:
            raise InputError("need exactly one max eigenvalue per block")
        if any(v <= 0 for v in self.max_eigenvals):
            raise InputError("max eigenvalues must be positive")

    @property
    def block_size(self) -> int:
        return self.dim // self.num_blocks


def _block_bounds(dim: int, num_blocks: int):
    size = dim // num_blocks
    return [(i * size, (i + 1) * size) for i in range(num_blocks)]


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    return orthonormalize(rng.standard_normal((n, n)))


def generate_hessian(spec: HessianSpec) -> SymMatrix:
    """Block-diagonal PSD matrix with linearly decaying block spectra.

    Block i is Q_i diag(linspace(lam_i, 0.1*lam_i, rank), 0, ..., 0) Q_i^T
    for a random orthogonal Q_i; note linspace with a single step keeps
    only the leading eigenvalue.  Off-block entries are exactly zero.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.block_size
    h = np.zeros((spec.dim, spec.dim))
    for i, (start, stop) in enumerate(_block_bounds(spec.dim, spec.num_blocks)):
        lam = np.linspace(spec.max_eigenvals[i], 0.1 * spec.max_eigenvals[i], spec.rank)
        q = _random_orthogonal(rng, size)[:, : spec.rank]
        h[start:stop, start:stop] = (q * lam) @ q.T
    return SymMatrix(h, block_bounds=_block_bounds(spec.dim, spec.num_blocks))


def heterogeneous_block_hessian(
    dim: int, num_blocks: int, rank: int, ref_set, seed: int
) -> SymMatrix:
    """Block-diagonal PSD matrix with heterogeneous integer spectra.

    Each block draws a reference level uniformly from ``ref_set`` and
    samples its ``rank`` nonzero eigenvalues as integers within +-2 of
    that reference; eigenvectors are a fresh random orthonormal basis
    per block.  This produces strong and weak blocks, the structure
    that spreads out the block-sparse alignment distribution.
    """
    if dim < 1 or num_blocks < 1 or dim % num_blocks != 0:
        raise InputError(f"dim {dim} must be a positive multiple of num_blocks {num_blocks}")
    size = dim // num_blocks
    if not (1 <= rank <= size):
        raise InputError(f"rank must be in [1, {size}], got {rank}")
    refs = [float(v) for v in ref_set]
    if not refs or any(v <= 2 for v in refs):
        raise InputError("ref_set must be nonempty with all references > 2")
    rng = np.random.default_rng(seed)
    h = np.zeros((dim, dim))
    for start, stop in _block_bounds(dim, num_blocks):
        ref = refs[int(rng.integers(0, len(refs)))]
        lam = ref + rng.integers(-2, 3, size=rank).astype(np.float64)
        q = _random_orthogonal(rng, size)[:, :rank]
        h[start:stop, start:stop] = (q * lam) @ q.T
    return SymMatrix(h, block_bounds=_block_bounds(dim, num_blocks))


class QuadraticObjective:
    """Deterministic quadratic ``0.5 * theta^T H theta`` (minimum 0 at 0).

    ``lambda_max`` and the trace are computed once and cached; loss
    evaluation exploits the block structure of H when present.
    """

    def __init__(self, h: SymMatrix):
        self.h = h
        self.dim = h.dim
        self.trace = h.trace
        self.lambda_max = h.lambda_max
        lam_min = h.eig().eigenvalues[-1]
        if lam_min < -1e-9 * max(self.lambda_max, 1.0):
            raise InputError(f"Hessian is not PSD (lambda_min = {lam_min:.3e})")

    def loss(self, theta: np.ndarray, batch_seed: int | None = None) -> float:
        return quadratic_loss(self, theta)

    def describe(self) -> dict:
        return {
            "objective": "quadratic",
            "dim": self.dim,
            "blocks": len(self.h.block_bounds) if self.h.block_bounds else 1,
            "lambda_max": self.lambda_max,
            "trace": self.trace,
        }


def quadratic_loss(obj: QuadraticObjective, theta: np.ndarray) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (obj.dim,):
        raise InputError(f"theta has shape {theta.shape}, expected ({obj.dim},)")
    bounds = obj.h.block_bounds
    if bounds and len(bounds) > 1:
        a = obj.h.entries
        acc = 0.0
        for start, stop in bounds:
            seg = theta[start:stop]
            acc += seg @ (a[start:stop, start:stop] @ seg)
        return 0.5 * acc
    return 0.5 * float(theta @ obj.h.matvec(theta))


# margin giving ~95% Bayes accuracy for two unit-variance Gaussian
# clusters at +-mu_c: accuracy = Phi(||2 mu_c|| / 2) = Phi(||mu_c||)
MARGIN_95 = 1.6448536269514722


def make_logistic_data(n: int, d: int, seed: int, margin: float = MARGIN_95):
    """Two Gaussian clusters at +-mu_c with ||mu_c|| = margin, labels +-1."""
    if n < 1 or d < 1:
        raise InputError("need n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    labels = np.where(rng.integers(0, 2, size=n) == 1, 1.0, -1.0)
    center = np.full(d, margin / np.sqrt(d))
    features = rng.standard_normal((n, d)) + labels[:, None] * center
    return features, labels


class StochasticObjective:
    """Mean logistic loss over seeded minibatches of a fixed dataset."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, batch_size: int):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise InputError("features must be a nonempty n x d matrix")
        if labels.shape != (features.shape[0],) or not np.all(np.abs(labels) == 1.0):
            raise InputError("labels must be +-1 with one entry per row of features")
        if not (1 <= batch_size <= features.shape[0]):
            raise InputError(f"batch_size must be in [1, {features.shape[0]}]")
        self.features = features
        self.labels = labels
        self.batch_size = batch_size
        self.n, self.dim = features.shape

    def loss(self, theta: np.ndarray, batch_seed: int | None = None) -> float:
        return stochastic_loss(self, theta, batch_seed)

    def accuracy(self, theta: np.ndarray) -> float:
        """Fraction of the full dataset classified correctly (ties count as errors)."""
        margin = self.labels * (self.features @ np.asarray(theta, dtype=np.float64))
        return float(np.mean(margin > 0.0))

    def describe(self) -> dict:
        return {
            "objective": "logistic",
            "dim": self.dim,
            "n": self.n,
            "batch_size": self.batch_size,
        }


def stochastic_loss(obj: StochasticObjective, theta: np.ndarray, batch_seed: int | None) -> float:
    """Mean logistic loss over the minibatch determined by ``batch_seed``.

    ``batch_seed=None`` evaluates the full dataset.  The minibatch is a
    uniform without-replacement draw, a pure function of the seed.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (obj.dim,):
        raise InputError(f"theta has shape {theta.shape}, expected ({obj.dim},)")
    if batch_seed is None:
        x, y = obj.features, obj.labels
    else:
        idx = np.random.default_rng(int(batch_seed)).choice(
            obj.n, size=obj.batch_size, replace=False
        )
        x, y = obj.features[idx], obj.labels[idx]
    z = y * (x @ theta)
    return float(np.mean(np.logaddexp(0.0, -z)))


# ---------------------------------------------------------------------------
# Hessian file format: one ASCII header line "dim num_blocks rank\n"
# followed by dim*dim little-endian float64 entries, row-major.
# ---------------------------------------------------------------------------


def save_hessian(path, h: SymMatrix, rank: int) -> None:
    blocks = len(h.block_bounds) if h.block_bounds else 1
    with open(path, "wb") as f:
        f.write(f"{h.dim} {blocks} {rank}\n".encode("ascii"))
        f.write(np.ascontiguousarray(h.entries, dtype="<f8").tobytes())


def load_hessian(path):
    """Read a Hessian file; returns ``(SymMatrix, rank)``."""
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").split()
        if len(header) != 3:
            raise InputError(f"{path}: malformed Hessian header {header!r}")
        try:
            dim, blocks, rank = (int(v) for v in header)
        except ValueError as exc:
            raise InputError(f"{path}: malformed Hessian header {header!r}") from exc
        if dim < 1 or blocks < 1 or dim % blocks != 0:
            raise InputError(f"{path}: inconsistent header dim={dim} blocks={blocks}")
        payload = f.read(8 * dim * dim)
        if len(payload) != 8 * dim * dim:
            raise InputError(f"{path}: truncated payload")
    entries = np.frombuffer(payload, dtype="<f8").reshape(dim, dim)
    return SymMatrix(entries, block_bounds=_block_bounds(dim, blocks)), rank
