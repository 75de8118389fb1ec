"""Zeroth-order gradient estimation and the block-coordinate optimizer family.

The estimator is the two-point scheme: perturb along a random direction,
evaluate the loss twice, and form the scalar
``projected_grad = (loss_plus - loss_minus) / (2 mu)``; the gradient
estimate is that scalar times the perturbation direction.  Directions
may be shaped by a projection M (see :mod:`subzero.perturbation`), and
the block-coordinate variants confine both the perturbation and the
update to one parameter block per step, holding at most one block-sized
buffer at a time.

Reproducibility contract: every per-step random quantity is derived
from ``(master_seed, step)`` via :func:`subzero.rng.mix64` with a
purpose tag, and Gaussian directions come from the in-house seeded
stream (:func:`subzero.rng.normals`), so the direction used for the
update is bit-identical to the one used for the probes — it is a pure
function of the step seed, never stored across steps.  Identical
``(config, master_seed)`` always reproduces a bit-identical RunLog,
regardless of how many runs execute concurrently elsewhere.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DivergenceError, InputError, NumericalError
from .perturbation import (
    BlockPartition,
    BlockSparse,
    Identity,
    LowRank,
    Perturbation,
    SparseMask,
    alignment_rho,
    apply_M,
    controlled_projection,
    sample_block_sparse,
    sample_low_rank,
    sample_sparse,
)
from .rng import choice_index, mix64, normals, permutation

# purpose tags for per-step seed derivation
_TAG_BATCH = 0x42
_TAG_ENSEMBLE = 0x4D
_TAG_SELECT = 0x53
_TAG_ORDER = 0x5B

BLOCK_ORDERS = ("ascending", "descending", "flipflop", "cyclic-random")


@dataclass
class ParamVector:
    """Flat parameter vector with an attached block partition."""

    values: np.ndarray
    partition: BlockPartition

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise InputError("parameter values must be a flat vector")
        if not np.all(np.isfinite(self.values)):
            raise InputError("parameter values must be finite")
        if self.partition.dim != self.values.size:
            raise InputError(
                f"partition covers {self.partition.dim} coordinates, vector has {self.values.size}"
            )

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass
class OptimConfig:
    """Knobs shared by every optimizer run."""

    mu: float
    lr: float
    steps: int
    lr_schedule: str = "constant"  # "constant" or "inverse-t" (lr / t)
    block_order: str = "cyclic-random"
    master_seed: int = 0
    # adaptive block selection
    adaptive_alpha: float = 0.1
    adaptive_tau: float = 1.0
    adaptive_warmup: int | None = None  # defaults to 10 * num_blocks
    adaptive_signed: bool = False  # feed signed projected grad into the EMA
    adaptive_warmup_order: str = "cyclic-random"  # or "ascending"
    # block-local Adam
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    adam_interval: int = 50  # consecutive steps per block before switching
    # instrumentation and guards
    rho_every: int = 0  # measure subspace alignment every k steps (0 = off)
    low_rank_u_space: str = "full"  # "full": u in R^d, apply M; "factor": u in R^s
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.mu <= 0:
            raise InputError("mu must be > 0")
        if self.lr < 0:
            raise InputError("lr must be >= 0")
        if self.steps < 1:
            raise InputError("steps must be >= 1")
        if self.lr_schedule not in ("constant", "inverse-t"):
            raise InputError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.block_order not in BLOCK_ORDERS + ("adaptive",):
            raise InputError(f"unknown block order {self.block_order!r}")
        if not (0 < self.adaptive_alpha <= 1):
            raise InputError("adaptive_alpha must be in (0, 1]")
        if self.adaptive_tau <= 0:
            raise InputError("adaptive_tau must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise InputError("adam betas must be in [0, 1)")
        if self.adam_interval < 1:
            raise InputError("adam_interval must be >= 1")
        if self.low_rank_u_space not in ("full", "factor"):
            raise InputError(f"unknown u-space {self.low_rank_u_space!r}")

    def eta(self, t: int) -> float:
        return self.lr if self.lr_schedule == "constant" else self.lr / t


@dataclass
class StepRecord:
    step: int
    loss_plus: float
    loss_minus: float
    projected_grad: float
    active_block: int  # 1-based block id, -1 for full-vector steps
    step_seed: int
    rho: float | None = None

    @property
    def loss(self) -> float:
        """Step-t loss proxy: the optimizer never evaluates the
        unperturbed loss, so the midpoint of the two probes stands in."""
        return 0.5 * (self.loss_plus + self.loss_minus)


RUNLOG_COLUMNS = ("step", "loss_plus", "loss_minus", "projected_grad", "active_block", "step_seed")


@dataclass
class RunLog:
    """Per-step records plus run metadata and the final parameters."""

    records: list
    metadata: dict
    final_parameters: np.ndarray | None = None

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def rho_values(self) -> np.ndarray:
        return np.array([r.rho for r in self.records if r.rho is not None])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(RUNLOG_COLUMNS)
            for r in self.records:
                w.writerow(
                    [
                        r.step,
                        format(r.loss_plus, ".17g"),
                        format(r.loss_minus, ".17g"),
                        format(r.projected_grad, ".17g"),
                        r.active_block,
                        r.step_seed,
                    ]
                )

    def write_metadata(self, path) -> None:
        with open(path, "w") as f:
            for key in sorted(self.metadata):
                f.write(f"{key} = {self.metadata[key]}\n")


def perturb_parameters(theta_slice: np.ndarray, mu: float, seed: int) -> None:
    """Add ``mu * u`` in place, with u ~ N(0, I) regenerated from ``seed``.

    The Gaussian stream is a pure function of the seed, so calling with
    (+mu, s), (-2mu, s), (+mu, s) walks the parameters out and back to
    within float roundoff.  ``mu = 0`` leaves the slice bit-identical.
    """
    if mu == 0.0:
        return
    theta_slice += mu * normals(seed, theta_slice.size)


def spsa_gradient(obj, theta: np.ndarray, m: Perturbation, mu: float, step_seed: int,
                  batch_seed: int | None = None, direction: np.ndarray | None = None) -> float:
    """Two-point estimate ``(L(theta + mu M u) - L(theta - mu M u)) / (2 mu)``.

    ``theta`` is probed in place and restored exactly before returning.
    The implied gradient estimate is the returned scalar times ``M u``,
    reconstructible from ``(step_seed, m)``.  ``direction`` is a test
    hook that overrides the Gaussian u.
    """
    if mu <= 0:
        raise InputError("mu must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    u = normals(step_seed, theta.size) if direction is None else np.asarray(direction, np.float64)
    pv = mu * apply_M(m, u)
    base = theta.copy()
    theta[:] = base + pv
    lp = obj.loss(theta, batch_seed)
    theta[:] = base - pv
    lm = obj.loss(theta, batch_seed)
    theta[:] = base
    if not (math.isfinite(lp) and math.isfinite(lm)):
        raise NumericalError(f"non-finite loss in two-point probe (seed {step_seed})")
    return (lp - lm) / (2.0 * mu)


def update_block_idx(order: str, t: int, num_blocks: int, seed: int | None = None) -> int:
    """1-based active-block index for step ``t`` (1-based) under ``order``.

    cyclic-random reshuffles at the start of every window of
    ``num_blocks`` steps (a pure function of ``seed`` and the window
    index), so each block appears exactly once per window.  flipflop
    with a single block degenerates to 1.
    """
    if num_blocks < 1:
        raise InputError("num_blocks must be >= 1")
    if t < 1:
        raise InputError("t is 1-based and must be >= 1")
    n = num_blocks
    if order == "ascending":
        return (t - 1) % n + 1
    if order == "descending":
        return n - (t - 1) % n
    if order == "flipflop":
        if n == 1:
            return 1
        return n - abs((t - 1) % (2 * n - 2) - (n - 1))
    if order == "cyclic-random":
        if seed is None:
            raise InputError("cyclic-random order needs a seed")
        window, offset = divmod(t - 1, n)
        return int(permutation(mix64(seed, window), n)[offset]) + 1
    raise InputError(f"unknown block order {order!r}")


def make_sampler(kind: str, *, d: int | None = None, s=None, mode: str = "fixed",
                 partition: BlockPartition | None = None, h=None, gamma: float | None = None):
    """Per-step perturbation factory: returns ``f(seed) -> Perturbation``.

    Kinds: ``identity``, ``lowrank``, ``sparse``, ``blocksparse``,
    ``controlled`` (low-rank with a dialed eigenvector fraction).
    """
    if kind == "identity":
        if d is None:
            raise InputError("identity sampler needs d")
        ident = Identity(d)
        return lambda seed: ident
    if kind == "lowrank":
        if d is None or s is None:
            raise InputError("lowrank sampler needs d and s")
        return lambda seed: sample_low_rank(d, int(s), seed)
    if kind == "sparse":
        if d is None or s is None:
            raise InputError("sparse sampler needs d and s")
        return lambda seed: sample_sparse(d, s, mode, seed)
    if kind == "blocksparse":
        if partition is None:
            raise InputError("blocksparse sampler needs a partition")
        return lambda seed: sample_block_sparse(partition, seed)
    if kind == "controlled":
        if h is None or s is None or gamma is None:
            raise InputError("controlled sampler needs h, s and gamma")
        return lambda seed: controlled_projection(h, int(s), gamma, seed)
    raise InputError(f"unknown sampler kind {kind!r}")


# ---------------------------------------------------------------------------
# run internals
# ---------------------------------------------------------------------------


class _RunState:
    """Bookkeeping shared by all run flavors."""

    def __init__(self, obj, config: OptimConfig, method: str, num_blocks: int, theta: np.ndarray):
        self.obj = obj
        self.config = config
        self.theta = theta
        self.records: list[StepRecord] = []
        self.initial_proxy: float | None = None
        self.t_start = time.perf_counter()
        self.metadata = {f"config.{k}": v for k, v in asdict(config).items()}
        self.metadata.update({f"objective.{k}": v for k, v in obj.describe().items()})
        self.metadata["method"] = method
        self.metadata["num_blocks"] = num_blocks

    def loss(self, batch_seed, step):
        value = self.obj.loss(self.theta, batch_seed)
        if not math.isfinite(value):
            raise DivergenceError(
                f"non-finite loss at step {step}", step,
                RunLog(self.records, self.metadata, self.theta.copy()),
            )
        return value

    def record(self, rec: StepRecord):
        self.records.append(rec)
        proxy = rec.loss
        if self.initial_proxy is None:
            self.initial_proxy = proxy
        if abs(proxy) > self.config.divergence_factor * max(abs(self.initial_proxy), 1e-300):
            raise DivergenceError(
                f"loss exceeded {self.config.divergence_factor:g} x initial at step {rec.step}",
                rec.step,
                RunLog(self.records, self.metadata, self.theta.copy()),
            )

    def finish(self) -> RunLog:
        self.metadata["wall_time_seconds"] = round(time.perf_counter() - self.t_start, 3)
        rhos = [r.rho for r in self.records if r.rho is not None]
        if rhos:
            self.metadata["rho_mean"] = sum(rhos) / len(rhos)
            self.metadata["rho_samples"] = len(rhos)
        return RunLog(self.records, self.metadata, self.theta.copy())


def _masked_step(state: _RunState, idx, t: int, step_seed: int, batch_seed):
    """Seed-reuse two-point step confined to a coordinate subset.

    ``idx=None`` means the whole vector.  Drawing u only for the active
    coordinates is the block-slice form of the estimator: masked-out
    coordinates never enter the probes or the update.  The pre-step
    block is held in a block-sized buffer, so restoration is exact and
    a zero step size leaves parameters bit-identical.
    """
    cfg = state.config
    theta = state.theta
    size = theta.size if idx is None else idx.size
    u = normals(step_seed, size)
    pv = cfg.mu * u
    base = theta.copy() if idx is None else theta[idx].copy()
    if idx is None:
        theta[:] = base + pv
        lp = state.loss(batch_seed, t)
        theta[:] = base - pv
        lm = state.loss(batch_seed, t)
    else:
        theta[idx] = base + pv
        lp = state.loss(batch_seed, t)
        theta[idx] = base - pv
        lm = state.loss(batch_seed, t)
    pg = (lp - lm) / (2.0 * cfg.mu)
    coeff = cfg.eta(t) * pg
    newval = base if coeff == 0.0 else base - coeff * u
    if idx is None:
        theta[:] = newval
    else:
        theta[idx] = newval
    return lp, lm, pg


def _projected_step(state: _RunState, m: Perturbation, t: int, step_seed: int, batch_seed):
    """Two-point step along M u for a general projection M."""
    cfg = state.config
    theta = state.theta
    if isinstance(m, LowRank) and cfg.low_rank_u_space == "factor":
        direction = m.u @ normals(step_seed, m.u.shape[1])
    else:
        direction = apply_M(m, normals(step_seed, theta.size))
    pv = cfg.mu * direction
    base = theta.copy()
    theta[:] = base + pv
    lp = state.loss(batch_seed, t)
    theta[:] = base - pv
    lm = state.loss(batch_seed, t)
    pg = (lp - lm) / (2.0 * cfg.mu)
    coeff = cfg.eta(t) * pg
    theta[:] = base if coeff == 0.0 else base - coeff * direction
    return lp, lm, pg


def _maybe_rho(obj, m: Perturbation, config: OptimConfig, t: int):
    if config.rho_every <= 0 or (t - 1) % config.rho_every != 0:
        return None
    h = getattr(obj, "h", None)
    if h is None:
        return None
    return alignment_rho(m, h)


def _theta_values(theta0) -> np.ndarray:
    if isinstance(theta0, ParamVector):
        return theta0.values
    arr = np.asarray(theta0, dtype=np.float64)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise InputError("theta0 must be a finite flat vector")
    return arr


# ---------------------------------------------------------------------------
# optimizer runs
# ---------------------------------------------------------------------------


def zo_sgd_run(obj, theta0, config: OptimConfig, m_sampler=None) -> RunLog:
    """Zeroth-order SGD, optionally with a fresh subspace projection per step.

    ``m_sampler`` is None (full-space directions) or a callable
    ``seed -> Perturbation`` (see :func:`make_sampler`); each step draws
    a fresh projection, a fresh direction seed, and a fresh batch seed.
    """
    theta = _theta_values(theta0).copy()
    d = theta.size
    state = _RunState(obj, config, "zo-sgd", 1, theta)
    for t in range(1, config.steps + 1):
        step_seed = mix64(config.master_seed, t)
        batch_seed = mix64(config.master_seed, t, _TAG_BATCH)
        m = m_sampler(mix64(config.master_seed, t, _TAG_ENSEMBLE)) if m_sampler else Identity(d)
        if isinstance(m, Identity):
            lp, lm, pg = _masked_step(state, None, t, step_seed, batch_seed)
        elif isinstance(m, (SparseMask, BlockSparse)):
            idx = np.nonzero(m.mask)[0] if isinstance(m, SparseMask) else m.indices
            lp, lm, pg = _masked_step(state, idx, t, step_seed, batch_seed)
        else:
            lp, lm, pg = _projected_step(state, m, t, step_seed, batch_seed)
        state.record(StepRecord(t, lp, lm, pg, -1, step_seed, _maybe_rho(obj, m, config, t)))
    return state.finish()


def mezo_bcd_run(obj, theta0: ParamVector, config: OptimConfig) -> RunLog:
    """Block-coordinate zeroth-order SGD with the seed-reuse trick.

    Each step perturbs and updates exactly one block of the partition;
    every other coordinate is untouched (bit-identical before/after).
    With a single block this is step-for-step identical to
    :func:`zo_sgd_run` with full-space directions.
    """
    if not isinstance(theta0, ParamVector):
        raise InputError("mezo_bcd_run needs a ParamVector (values + partition)")
    if config.block_order == "adaptive":
        return adaptive_run(obj, theta0, config)
    part = theta0.partition
    n = part.num_blocks
    order_seed = mix64(config.master_seed, _TAG_ORDER)
    state = _RunState(obj, config, "mezo-bcd", n, theta0.values.copy())
    for t in range(1, config.steps + 1):
        step_seed = mix64(config.master_seed, t)
        batch_seed = mix64(config.master_seed, t, _TAG_BATCH)
        j = update_block_idx(config.block_order, t, n, order_seed)
        lp, lm, pg = _masked_step(state, part.blocks[j - 1], t, step_seed, batch_seed)
        rho = _maybe_rho(obj, BlockSparse(part, j - 1), config, t)
        state.record(StepRecord(t, lp, lm, pg, j, step_seed, rho))
    return state.finish()


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def adaptive_run(obj, theta0: ParamVector, config: OptimConfig, probe=None) -> RunLog:
    """MeZO-BCD with adaptive block selection.

    During the warmup window blocks follow a deterministic cycle; after
    warmup the active block is sampled from a softmax over per-block
    exponential moving averages of the projected-gradient magnitude
    (signed value behind ``adaptive_signed``).  Only the active block's
    EMA moves on a step.  ``probe(t, probabilities)`` is a diagnostic
    hook invoked after each post-warmup selection.
    """
    if not isinstance(theta0, ParamVector):
        raise InputError("adaptive_run needs a ParamVector (values + partition)")
    part = theta0.partition
    n = part.num_blocks
    warmup = config.adaptive_warmup if config.adaptive_warmup is not None else 10 * n
    if warmup > config.steps:
        raise InputError(f"warmup {warmup} exceeds step budget {config.steps}")
    if config.adaptive_warmup_order not in ("cyclic-random", "ascending"):
        raise InputError(f"unknown warmup order {config.adaptive_warmup_order!r}")
    order_seed = mix64(config.master_seed, _TAG_ORDER)
    ema = np.zeros(n)
    state = _RunState(obj, config, "mezo-bcd-adaptive", n, theta0.values.copy())
    state.metadata["adaptive_warmup_effective"] = warmup
    for t in range(1, config.steps + 1):
        step_seed = mix64(config.master_seed, t)
        batch_seed = mix64(config.master_seed, t, _TAG_BATCH)
        if t <= warmup:
            j = update_block_idx(config.adaptive_warmup_order, t, n, order_seed)
        else:
            p = _softmax(ema / config.adaptive_tau)
            if abs(float(p.sum()) - 1.0) > 1e-12:
                raise NumericalError(f"selection probabilities sum to {p.sum()!r}")
            if probe is not None:
                probe(t, p.copy())
            j = choice_index(mix64(config.master_seed, t, _TAG_SELECT), p) + 1
        lp, lm, pg = _masked_step(state, part.blocks[j - 1], t, step_seed, batch_seed)
        z = pg if config.adaptive_signed else abs(pg)
        ema[j - 1] = config.adaptive_alpha * z + (1.0 - config.adaptive_alpha) * ema[j - 1]
        state.record(StepRecord(t, lp, lm, pg, j, step_seed, None))
    return state.finish()


@dataclass
class AdamState:
    """Block-local moment estimates; reset whenever the active block changes."""

    m: np.ndarray
    v: np.ndarray
    t_local: int


def mezo_bcd_adam_run(obj, theta0: ParamVector, config: OptimConfig, probe=None) -> RunLog:
    """MeZO-BCD with a block-local Adam update rule.

    The active block is held for ``adam_interval`` consecutive steps so
    the moment estimates can accumulate, then the state is discarded and
    the next block (per ``block_order``) starts from zeros.  At local
    step 1 the bias correction makes the first moment equal the raw
    estimate, so the very first update in each block is the
    sign-normalized direction.  ``probe(t, state, ghat)`` is a
    diagnostic hook invoked after each state update.
    """
    if not isinstance(theta0, ParamVector):
        raise InputError("mezo_bcd_adam_run needs a ParamVector (values + partition)")
    part = theta0.partition
    n = part.num_blocks
    nu = config.adam_interval
    order_seed = mix64(config.master_seed, _TAG_ORDER)
    state = _RunState(obj, config, "mezo-bcd-adam", n, theta0.values.copy())
    cfg = config
    theta = state.theta
    t = 0
    for t_block in range(1, math.ceil(config.steps / nu) + 1):
        j = update_block_idx(config.block_order, t_block, n, order_seed)
        idx = part.blocks[j - 1]
        adam = AdamState(np.zeros(idx.size), np.zeros(idx.size), 0)
        for _ in range(nu):
            if t >= config.steps:
                break
            t += 1
            step_seed = mix64(config.master_seed, t)
            batch_seed = mix64(config.master_seed, t, _TAG_BATCH)
            u = normals(step_seed, idx.size)
            pv = cfg.mu * u
            base = theta[idx].copy()
            theta[idx] = base + pv
            lp = state.loss(batch_seed, t)
            theta[idx] = base - pv
            lm = state.loss(batch_seed, t)
            pg = (lp - lm) / (2.0 * cfg.mu)
            ghat = pg * u
            adam.t_local += 1
            adam.m = cfg.adam_beta1 * adam.m + (1.0 - cfg.adam_beta1) * ghat
            adam.v = cfg.adam_beta2 * adam.v + (1.0 - cfg.adam_beta2) * (ghat * ghat)
            m_hat = adam.m / (1.0 - cfg.adam_beta1 ** adam.t_local)
            v_hat = adam.v / (1.0 - cfg.adam_beta2 ** adam.t_local)
            theta[idx] = base - cfg.eta(t) * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            if probe is not None:
                probe(t, AdamState(adam.m.copy(), adam.v.copy(), adam.t_local), ghat.copy())
            state.record(StepRecord(t, lp, lm, pg, j, step_seed, None))
    return state.finish()
