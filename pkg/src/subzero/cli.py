"""Command-line harness: generators, alignment sweeps, optimizer runs, and
one-command reproduction bundles.

Subcommands
-----------
``gen-hessian``        write a synthetic Hessian file plus a metadata sidecar.
``measure-alignment``  sample alignment distributions for ensembles x sranks.
``optimize``           run an optimizer over sweep axes, one RunLog CSV per run.
``reproduce``          run a full panel pipeline with source-scale defaults and
                       print a pass/fail verdict per acceptance check.

File formats
------------
Hessian file: one ASCII header line ``dim num_blocks rank`` followed by
``dim*dim`` little-endian float64 entries, row-major.

RunLog CSV columns, in order:
``step,loss_plus,loss_minus,projected_grad,active_block,step_seed``.
Each run also gets a ``key = value`` metadata sidecar (config echo,
objective id, wall time, loss summaries).

Alignment CSV columns:
``ensemble,srank,trial,rho,mean,variance,min,max`` — sample rows fill the
first four columns; one summary row per (ensemble, srank) group carries
``trial = summary`` and the group statistics.

Every emitted data CSV is listed in ``manifest.txt`` as
``<sha256>  <filename>``; re-running a command into the same directory
verifies the hashes still match (metadata sidecars carry wall-clock
times and are deliberately not hashed).

Config files: flat ``key = value`` text, ``#`` comments allowed; keys are
the long option names of ``optimize`` with dashes or underscores.
Explicit command-line flags override file values.

Exit codes: 0 success, 2 input error, 3 numerical error (including
divergence aborts; partial logs are kept), 4 acceptance failure.
Environment: ``SUBZERO_THREADS`` bounds the sweep worker pool.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    LayerShape,
    peak_memory_params,
    traffic_per_step,
    write_memory_csv,
    write_traffic_csv,
)
from .errors import AcceptanceError, DivergenceError, InputError, NumericalError
from .linalg import SymMatrix, intdim, srank as stable_rank
from .objectives import (
    HessianSpec,
    QuadraticObjective,
    StochasticObjective,
    generate_hessian,
    heterogeneous_block_hessian,
    load_hessian,
    make_logistic_data,
    save_hessian,
)
from .optim import (
    OptimConfig,
    ParamVector,
    adaptive_run,
    make_sampler,
    mezo_bcd_adam_run,
    mezo_bcd_run,
    zo_sgd_run,
)
from .perturbation import BlockPartition, expected_rho, rho_distribution
from .rng import mix64

FIG1_GAMMAS_LEFT = (0.0, 0.2, 0.4, 0.7, 1.0)
FIG1_GAMMAS_MIDDLE = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
FIG1_SRANKS = (16, 32, 64, 128, 256)
RHO_ENSEMBLES = ("lowrank", "sparse", "blocksparse")
PANELS = ("fig1-left", "fig1-middle", "fig1-right", "memory-table", "traffic")

# variance-ratio floor for the distribution panel: block-sparse spread vs
# low-rank concentration at s = 64 on the heterogeneous testbed.  Pilot
# runs at master seeds 1-3 measured ratios between 2632 and 3710; 100
# keeps a 26x margin while still witnessing the heterogeneity effect.
BLOCK_VS_LOWRANK_VARIANCE_FACTOR = 100.0


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def worker_count() -> int:
    env = os.environ.get("SUBZERO_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"SUBZERO_THREADS must be an integer, got {env!r}") from exc
    return max(1, min(os.cpu_count() or 1, 8))


def _pin_worker_blas() -> None:
    """Pin the worker's BLAS to one thread.

    Two birds: single-threaded BLAS is faster at this package's matrix
    sizes than contended multithreading, and it makes every floating
    point result independent of the worker-pool size (OpenBLAS bits can
    change with its thread count).  Best effort: if the bundled OpenBLAS
    or its control symbol cannot be found, workers keep the inherited
    configuration, which is still pool-size independent.
    """
    import ctypes
    import glob

    candidates = glob.glob(os.path.join(os.path.dirname(np.__file__), "..", "numpy.libs", "lib*openblas*"))
    candidates += glob.glob(os.path.join(os.path.dirname(np.__file__), ".libs", "lib*openblas*"))
    for path in candidates:
        try:
            lib = ctypes.CDLL(path)
        except OSError:
            continue
        for sym in (
            "scipy_openblas_set_num_threads64_",
            "scipy_openblas_set_num_threads_64_",
            "openblas_set_num_threads64_",
            "openblas_set_num_threads",
            "goto_set_num_threads",
        ):
            fn = getattr(lib, sym, None)
            if fn is not None:
                fn(1)
                return


def _pool_map(fn, payloads):
    """Map tasks over the worker pool; results come back in task order.

    All numerical work happens inside (forked) workers even at pool size
    one, and every worker pins BLAS to a single thread, so the bits
    never depend on the pool size.
    """
    payloads = list(payloads)
    workers = min(worker_count(), max(1, len(payloads)))
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=workers, initializer=_pin_worker_blas
    ) as ex:
        return list(ex.map(fn, payloads))


def _write_manifest(out_dir: Path, names) -> None:
    """Hash the named data artifacts; verify against a previous manifest."""
    lines = []
    for name in names:
        digest = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
        lines.append(f"{digest}  {name}")
    manifest = out_dir / "manifest.txt"
    new_text = "\n".join(lines) + "\n"
    if manifest.exists():
        old_text = manifest.read_text()
        if old_text != new_text:
            manifest.write_text(new_text)
            raise AcceptanceError(
                f"{manifest}: artifact hashes differ from the previous run "
                "(nondeterminism or changed flags)"
            )
    manifest.write_text(new_text)


def _parse_config_file(path: str) -> dict:
    """Flat key = value text; '#' starts a comment; keys are option names."""
    values = {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _csv_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# gen-hessian
# ---------------------------------------------------------------------------


def cmd_gen_hessian(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.hetero:
        refs = [float(v) for v in args.hetero.split(",") if v]
        h = heterogeneous_block_hessian(args.dim, args.blocks, args.rank, refs, args.seed)
        spec_echo = {
            "generator": "heterogeneous",
            "dim": args.dim,
            "blocks": args.blocks,
            "rank": args.rank,
            "ref_set": ",".join(_fmt(v) for v in refs),
            "seed": args.seed,
        }
    else:
        maxes = [float(v) for v in args.max_eig.split(",") if v]
        if len(maxes) == 1:
            maxes = maxes * args.blocks
        spec = HessianSpec(dim=args.dim, rank=args.rank, num_blocks=args.blocks,
                           max_eigenvals=maxes, seed=args.seed)
        h = generate_hessian(spec)
        spec_echo = {
            "generator": "linear-decay",
            "dim": args.dim,
            "blocks": args.blocks,
            "rank": args.rank,
            "max_eigenvals": ",".join(_fmt(v) for v in maxes),
            "seed": args.seed,
        }
    save_hessian(out, h, args.rank)
    lam = h.eig().eigenvalues
    summary = {
        "lambda_max": _fmt(lam[0]),
        "trace": _fmt(h.trace),
        "intdim": _fmt(intdim(h)),
        "srank": _fmt(stable_rank(h)),
        "nonzero_eigenvalues": int(np.count_nonzero(lam > 1e-9 * lam[0])),
    }
    with open(str(out) + ".meta", "w") as f:
        for k, v in {**spec_echo, **summary}.items():
            f.write(f"{k} = {v}\n")
    print(f"wrote {out} ({args.dim}x{args.dim}, lambda_max={summary['lambda_max']})")
    return 0


# ---------------------------------------------------------------------------
# measure-alignment
# ---------------------------------------------------------------------------


def _alignment_task(payload):
    h = SymMatrix(payload["h"], block_bounds=payload["bounds"])
    samples = rho_distribution(payload["kind"], h, payload["s"], payload["trials"], payload["seed"])
    return payload["kind"], payload["s"], [smp.rho for smp in samples]


def measure_alignment(h: SymMatrix, ensembles, sranks, trials: int, master_seed: int):
    """Sample every (ensemble, srank) group; returns group -> rho array."""
    for s in sranks:
        if "blocksparse" in ensembles and h.dim % int(s) != 0:
            raise InputError(
                f"block-sparse needs srank to divide the dimension: d={h.dim}, s={s}"
            )
    payloads = []
    for ki, kind in enumerate(ensembles):
        for s in sranks:
            payloads.append(
                {
                    "h": np.asarray(h.entries),
                    "bounds": h.block_bounds,
                    "kind": kind,
                    "s": int(s),
                    "trials": trials,
                    "seed": mix64(master_seed, ki, int(s)),
                }
            )
    # largest jobs first so the pool packs well; reassemble in canon order
    order = sorted(range(len(payloads)), key=lambda i: -payloads[i]["s"] * (payloads[i]["kind"] == "lowrank"))
    results = _pool_map(_alignment_task, [payloads[i] for i in order])
    by_group = {(kind, s): np.asarray(rhos) for kind, s, rhos in results}
    return {(kind, int(s)): by_group[(kind, int(s))] for kind in ensembles for s in sranks}


def write_alignment_bundle(path: Path, groups) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["ensemble", "srank", "trial", "rho", "mean", "variance", "min", "max"])
        for (kind, s), rhos in groups.items():
            for i, rho in enumerate(rhos):
                w.writerow([kind, s, i, _fmt(rho), "", "", "", ""])
            w.writerow(
                [
                    kind,
                    s,
                    "summary",
                    "",
                    _fmt(rhos.mean()),
                    _fmt(rhos.var(ddof=1)) if rhos.size > 1 else _fmt(0.0),
                    _fmt(rhos.min()),
                    _fmt(rhos.max()),
                ]
            )


def cmd_measure_alignment(args) -> int:
    h, _rank = load_hessian(args.hessian)
    ensembles = [e.strip() for e in args.ensembles.split(",") if e.strip()]
    sranks = [int(v) for v in args.sranks.split(",") if v]
    if not ensembles or not sranks:
        raise InputError("need at least one ensemble and one srank")
    groups = measure_alignment(h, ensembles, sranks, args.trials, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_alignment_bundle(out, groups)
    print(f"wrote {out}: {sum(len(v) for v in groups.values())} samples, {len(groups)} groups")
    return 0


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def _build_objective(payload):
    if payload["objective"] == "quadratic":
        h = SymMatrix(payload["h"], block_bounds=payload["bounds"])
        return QuadraticObjective(h)
    x, y = make_logistic_data(payload["n"], payload["d"], payload["data_seed"])
    return StochasticObjective(x, y, payload["batch"])


def _initial_theta(payload, dim):
    if payload["init"] == "zeros":
        return np.zeros(dim)
    scale = payload["init_scale"]
    return scale * np.random.default_rng(mix64(payload["master_seed"], 0x7130)).standard_normal(dim)


def _optimize_task(payload):
    obj = _build_objective(payload)
    dim = obj.dim
    cfg = OptimConfig(
        mu=payload["mu"],
        lr=payload["lr"],
        steps=payload["steps"],
        lr_schedule=payload["lr_schedule"],
        block_order=payload["order"],
        master_seed=payload["master_seed"],
        rho_every=payload["rho_every"],
        adam_interval=payload["adam_interval"],
    )
    theta0 = _initial_theta(payload, dim)
    method = payload["method"]
    diverged = None
    try:
        if method == "zo-sgd":
            sampler = None
            if payload["ensemble"] != "identity":
                h = getattr(obj, "h", None)
                partition = (
                    BlockPartition.equal(dim, payload["blocks"]) if payload["blocks"] else None
                )
                sampler = make_sampler(
                    payload["ensemble"],
                    d=dim,
                    s=payload["srank"],
                    partition=partition,
                    h=h,
                    gamma=payload["gamma"],
                )
            log = zo_sgd_run(obj, theta0, cfg, sampler)
        else:
            blocks = payload["blocks"] or 1
            pv = ParamVector(theta0, BlockPartition.equal(dim, blocks))
            if method == "mezo-bcd":
                log = mezo_bcd_run(obj, pv, cfg)
            elif method == "mezo-bcd-adam":
                log = mezo_bcd_adam_run(obj, pv, cfg)
            elif method == "adaptive":
                log = adaptive_run(obj, pv, cfg)
            else:
                raise InputError(f"unknown method {method!r}")
    except DivergenceError as err:
        log = err.partial_log
        diverged = err.step
    drift = float(np.max(np.abs(log.final_parameters - theta0))) if log.records else 0.0
    log.metadata["theta_drift_max"] = _fmt(drift)
    log.metadata["final_loss_proxy"] = _fmt(log.records[-1].loss) if log.records else ""
    log.metadata["initial_loss_proxy"] = _fmt(log.records[0].loss) if log.records else ""
    if diverged is not None:
        log.metadata["diverged_at_step"] = diverged
    return log, diverged


def cmd_optimize(args) -> int:
    cfg_file = _parse_config_file(args.config) if args.config else {}

    def opt(name, cast, default):
        cli_val = getattr(args, name)
        if cli_val is not None:
            return cli_val
        if name in cfg_file:
            raw = cfg_file[name]
            return cast(raw)
        return default

    method = opt("method", str, "zo-sgd")
    hessian = opt("hessian", str, None)
    logistic = opt("logistic", str, None)
    if (hessian is None) == (logistic is None):
        raise InputError("exactly one of --hessian or --logistic is required")
    if hessian and not Path(hessian).exists():
        raise InputError(f"hessian file not found: {hessian}")

    base = {
        "method": method,
        "mu": opt("mu", float, 1e-4),
        "lr": opt("lr", float, 1e-3),
        "steps": opt("steps", int, 1000),
        "lr_schedule": opt("lr_schedule", str, "constant"),
        "order": opt("order", str, "cyclic-random"),
        "blocks": opt("blocks", int, None),
        "ensemble": opt("ensemble", str, "identity"),
        "srank": opt("srank", int, None),
        "rho_every": opt("rho_every", int, 0),
        "adam_interval": opt("adam_interval", int, 50),
        "init": opt("init", str, "gauss"),
        "init_scale": opt("init_scale", float, 1.0),
    }
    if hessian:
        h, _rank = load_hessian(hessian)
        base.update({"objective": "quadratic", "h": np.asarray(h.entries), "bounds": h.block_bounds})
    else:
        parts = dict(kv.split("=") for kv in logistic.split(","))
        base.update(
            {
                "objective": "logistic",
                "n": int(parts.get("n", 2000)),
                "d": int(parts.get("d", 200)),
                "batch": int(parts.get("batch", 64)),
                "data_seed": int(parts.get("seed", 0)),
            }
        )

    seeds = [int(v) for v in opt("seeds", str, "0").split(",") if v != ""]
    if not seeds or len(set(seeds)) != len(seeds):
        raise InputError("--seeds must be a nonempty list of distinct integers")
    gammas_raw = opt("gammas", str, None)
    gammas = [float(v) for v in gammas_raw.split(",")] if gammas_raw else [opt("gamma", float, None)]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    payloads, names = [], []
    for gamma in gammas:
        for seed in seeds:
            p = dict(base)
            p["gamma"] = gamma
            p["master_seed"] = seed
            payloads.append(p)
            tag = f"gamma{gamma:g}_" if gamma is not None else ""
            names.append(f"run_{tag}seed{seed}")
    results = _pool_map(_optimize_task, payloads)

    emitted = []
    any_diverged = None
    for name, (log, diverged) in zip(names, results):
        log.write_csv(out_dir / f"{name}.csv")
        log.write_metadata(out_dir / f"{name}.meta")
        emitted.append(f"{name}.csv")
        if diverged is not None and any_diverged is None:
            any_diverged = (name, diverged)
    _write_manifest(out_dir, emitted)
    print(f"wrote {len(emitted)} runs to {out_dir}")
    if any_diverged:
        raise DivergenceError(
            f"run {any_diverged[0]} diverged at step {any_diverged[1]} (partial log kept)",
            any_diverged[1],
        )
    return 0


# ---------------------------------------------------------------------------
# reproduce: fig1 panels and cost-model tables
# ---------------------------------------------------------------------------


def _fig1_hessian(master_seed: int) -> SymMatrix:
    spec = HessianSpec(dim=256, rank=64, num_blocks=1, max_eigenvals=[10.0],
                       seed=mix64(master_seed, 0x48))
    return generate_hessian(spec)


def _controlled_run_task(payload):
    h = SymMatrix(payload["h"])
    obj = QuadraticObjective(h)
    theta0 = np.random.default_rng(payload["theta_seed"]).standard_normal(h.dim)
    cfg = OptimConfig(
        mu=payload["mu"],
        lr=payload["lr"],
        steps=payload["steps"],
        master_seed=payload["run_seed"],
        rho_every=payload["rho_every"],
    )
    sampler = make_sampler("controlled", h=h, s=payload["s"], gamma=payload["gamma"])
    log = zo_sgd_run(obj, theta0, cfg, sampler)
    rhos = log.rho_values()
    return {
        "gamma": payload["gamma"],
        "seed_index": payload["seed_index"],
        "losses": log.losses(),
        "rho_bar": float(rhos.mean()) if rhos.size else float("nan"),
    }


def _fig1_payloads(h, gammas, seeds, steps, master_seed, rho_every):
    payloads = []
    for gamma in gammas:
        for i in range(seeds):
            payloads.append(
                {
                    "h": np.asarray(h.entries),
                    "gamma": gamma,
                    "seed_index": i,
                    "theta_seed": mix64(master_seed, 0x7130, i),
                    "run_seed": mix64(master_seed, int(round(gamma * 1000)), i),
                    "steps": steps,
                    "lr": 1e-3,
                    "mu": 1e-4,
                    "s": 64,
                    "rho_every": rho_every,
                }
            )
    return payloads


def reproduce_fig1_left(out_dir: Path, master_seed: int = 1, steps: int = 1000, seeds: int = 5):
    """Loss curves under the controlled-alignment projection, one per gamma.

    Verdict: mean final loss strictly decreases as gamma grows.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    h = _fig1_hessian(master_seed)
    results = _pool_map(_controlled_run_task, _fig1_payloads(h, FIG1_GAMMAS_LEFT, seeds, steps, master_seed, 10))

    curves, mean_rows, final_rows = [], [], []
    finals_by_gamma = {}
    for gamma in FIG1_GAMMAS_LEFT:
        group = [r for r in results if r["gamma"] == gamma]
        losses = np.stack([r["losses"] for r in group])
        for r in group:
            curves.extend(
                (_fmt(gamma), r["seed_index"], t + 1, _fmt(v)) for t, v in enumerate(r["losses"])
            )
        mean_curve = losses.mean(axis=0)
        mean_rows.extend((_fmt(gamma), t + 1, _fmt(v)) for t, v in enumerate(mean_curve))
        finals = losses[:, -1]
        finals_by_gamma[gamma] = float(finals.mean())
        rho_bar = float(np.mean([r["rho_bar"] for r in group]))
        final_rows.append((_fmt(gamma), _fmt(finals.mean()), _fmt(finals.min()), _fmt(finals.max()), _fmt(rho_bar)))

    _csv_rows(out_dir / "curves.csv", ["gamma", "seed", "step", "loss"], curves)
    _csv_rows(out_dir / "curves_mean.csv", ["gamma", "step", "mean_loss"], mean_rows)
    _csv_rows(
        out_dir / "finals.csv",
        ["gamma", "mean_final_loss", "min_final_loss", "max_final_loss", "rho_bar"],
        final_rows,
    )
    _write_manifest(out_dir, ["curves.csv", "curves_mean.csv", "finals.csv"])

    ordered = [finals_by_gamma[g] for g in FIG1_GAMMAS_LEFT]
    ok = all(a > b for a, b in zip(ordered, ordered[1:]))
    _verdict("fig1-left", ok, f"mean final losses by gamma: {[f'{v:.4g}' for v in ordered]}")
    return ok


def reproduce_fig1_middle(out_dir: Path, master_seed: int = 1, steps: int = 10_000, seeds: int = 5):
    """Iterations-to-target against mean alignment over the 12-gamma grid.

    The target is the minimum loss seen by the gamma = 0 run of the same
    seed.  Verdict: iterations x rho_bar stays within +-25% of its mean
    across gamma >= 0.2.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    h = _fig1_hessian(master_seed)
    results = _pool_map(
        _controlled_run_task, _fig1_payloads(h, FIG1_GAMMAS_MIDDLE, seeds, steps, master_seed, 10)
    )
    by_key = {(r["gamma"], r["seed_index"]): r for r in results}
    targets = {i: float(by_key[(0.0, i)]["losses"].min()) for i in range(seeds)}

    run_rows, agg_rows = [], []
    products = {}
    for gamma in FIG1_GAMMAS_MIDDLE:
        iters, rhos = [], []
        for i in range(seeds):
            r = by_key[(gamma, i)]
            hit = np.nonzero(r["losses"] <= targets[i])[0]
            it = int(hit[0]) + 1 if hit.size else None
            run_rows.append(
                (_fmt(gamma), i, it if it is not None else "", _fmt(r["rho_bar"]))
            )
            if it is not None:
                iters.append(it)
            rhos.append(r["rho_bar"])
        mean_it = float(np.mean(iters)) if len(iters) == seeds else float("nan")
        rho_bar = float(np.mean(rhos))
        product = mean_it * rho_bar
        products[gamma] = product
        agg_rows.append((_fmt(gamma), _fmt(mean_it), _fmt(rho_bar), _fmt(product)))

    _csv_rows(out_dir / "middle_runs.csv", ["gamma", "seed", "iterations", "rho_bar"], run_rows)
    _csv_rows(out_dir / "middle.csv", ["gamma", "mean_iterations", "rho_bar", "product"], agg_rows)
    _write_manifest(out_dir, ["middle_runs.csv", "middle.csv"])

    checked = [products[g] for g in FIG1_GAMMAS_MIDDLE if g >= 0.2]
    center = float(np.mean(checked))
    ok = all(np.isfinite(checked)) and all(abs(p - center) <= 0.25 * center for p in checked)
    spread = [p / center for p in checked]
    _verdict(
        "fig1-middle",
        ok,
        f"iterations x rho_bar relative to mean over gamma >= 0.2: "
        f"[{min(spread):.3f}, {max(spread):.3f}]",
    )
    return ok


def reproduce_fig1_right(out_dir: Path, master_seed: int = 1, trials: int = 1000):
    """Alignment distributions for the three ensembles on the
    heterogeneous block testbed.

    Verdicts: every group mean matches the closed-form expectation
    within 3 standard errors, and the block-sparse sample variance
    exceeds the low-rank variance at s = 64 by the frozen factor.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    h = heterogeneous_block_hessian(
        dim=1024, num_blocks=16, rank=16, ref_set=(10, 40, 70, 100),
        seed=mix64(master_seed, 0x4852),
    )
    groups = measure_alignment(h, RHO_ENSEMBLES, FIG1_SRANKS, trials, master_seed)
    write_alignment_bundle(out_dir / "alignment.csv", groups)
    _write_manifest(out_dir, ["alignment.csv"])

    mean_ok = True
    worst = 0.0
    for (kind, s), rhos in groups.items():
        target = expected_rho(h, s)
        se = rhos.std(ddof=1) / np.sqrt(rhos.size)
        dev = abs(float(rhos.mean()) - target) / se if se > 0 else 0.0
        worst = max(worst, dev)
        if dev > 3.0:
            mean_ok = False
    _verdict("fig1-right means", mean_ok, f"worst |mean - expectation| = {worst:.2f} SE (limit 3)")

    var_block = groups[("blocksparse", 64)].var(ddof=1)
    var_low = groups[("lowrank", 64)].var(ddof=1)
    ratio = var_block / var_low
    var_ok = ratio >= BLOCK_VS_LOWRANK_VARIANCE_FACTOR
    _verdict(
        "fig1-right spread",
        var_ok,
        f"block-sparse / low-rank variance at s=64: {ratio:.1f} "
        f"(floor {BLOCK_VS_LOWRANK_VARIANCE_FACTOR})",
    )
    return mean_ok and var_ok


MEMORY_DEMO_LAYERS = [
    LayerShape(512, 64),  # embedding
    LayerShape(64, 256),
    LayerShape(256, 64),
    LayerShape(64, 256),
    LayerShape(256, 64),
    LayerShape(64, 512),  # output head
]
MEMORY_EXAMPLE_LAYERS = [LayerShape(4, 4), LayerShape(2, 2)]


def reproduce_memory_table(out_dir: Path, master_seed: int = 1):
    """Peak-memory parameter counts for all four methods.

    Verdicts: the worked examples come out exactly 36 / 52 / 30, and the
    block-coordinate peak equals the full-space peak on random layer sets.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    assignment = {i: i for i in range(len(MEMORY_DEMO_LAYERS))}
    demo = [
        peak_memory_params("mezo", MEMORY_DEMO_LAYERS),
        peak_memory_params("sparse-mezo", MEMORY_DEMO_LAYERS),
        peak_memory_params("lozo", MEMORY_DEMO_LAYERS, rank=4),
        peak_memory_params("mezo-bcd", MEMORY_DEMO_LAYERS, block_assignment=assignment),
    ]
    write_memory_csv(out_dir / "memory.csv", demo)
    examples = [
        peak_memory_params("mezo", MEMORY_EXAMPLE_LAYERS),
        peak_memory_params("sparse-mezo", MEMORY_EXAMPLE_LAYERS),
        peak_memory_params("lozo", MEMORY_EXAMPLE_LAYERS, rank=1),
        peak_memory_params("mezo-bcd", MEMORY_EXAMPLE_LAYERS, block_assignment={0: 0, 1: 1}),
    ]
    write_memory_csv(out_dir / "memory_examples.csv", examples)
    _write_manifest(out_dir, ["memory.csv", "memory_examples.csv"])

    ok_examples = [examples[0].peak, examples[1].peak, examples[2].peak] == [36, 52, 30]
    _verdict("memory worked examples", ok_examples,
             f"mezo/sparse/lozo peaks: {[r.peak for r in examples[:3]]} (want [36, 52, 30])")

    rng = np.random.default_rng(master_seed)
    ok_equal = True
    for _ in range(50):
        layers = [
            LayerShape(int(rng.integers(1, 64)), int(rng.integers(1, 64)))
            for _ in range(int(rng.integers(1, 9)))
        ]
        amap = {i: int(rng.integers(0, 3)) for i in range(len(layers))}
        if (
            peak_memory_params("mezo-bcd", layers, block_assignment=amap).peak
            != peak_memory_params("mezo", layers).peak
        ):
            ok_equal = False
            break
    _verdict("memory bcd == mezo peak", ok_equal, "50 random layer sets")
    return ok_examples and ok_equal


def reproduce_traffic(out_dir: Path, master_seed: int = 1):
    """Per-step parameter-load counts.

    Verdict: at d = 100, the block-coordinate count with four blocks is
    275 versus the full-space 500.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [("mezo", 100, 1, traffic_per_step("mezo", 100))]
    rows += [
        ("mezo-bcd", 100, n, traffic_per_step("mezo-bcd", 100, n))
        for n in (1, 2, 4, 8, 16, 32, 64)
    ]
    big_d = 10_000
    rows += [("mezo", big_d, 1, traffic_per_step("mezo", big_d))]
    rows += [
        ("mezo-bcd", big_d, n, traffic_per_step("mezo-bcd", big_d, n))
        for n in (1, 4, 16, 64, 256, 1024)
    ]
    write_traffic_csv(out_dir / "traffic.csv", rows)
    _write_manifest(out_dir, ["traffic.csv"])
    ok = traffic_per_step("mezo-bcd", 100, 4) == 275.0 and traffic_per_step("mezo", 100) == 500.0
    _verdict("traffic", ok, "d=100: mezo-bcd(N=4) = 275 vs mezo = 500")
    return ok


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}: {name} — {detail}")


def cmd_reproduce(args) -> int:
    out = Path(args.out) if args.out else Path("out") / args.panel
    seed = args.master_seed
    if args.panel == "fig1-left":
        ok = reproduce_fig1_left(out, seed, steps=args.steps or 1000, seeds=args.seeds or 5)
    elif args.panel == "fig1-middle":
        ok = reproduce_fig1_middle(out, seed, steps=args.steps or 10_000, seeds=args.seeds or 5)
    elif args.panel == "fig1-right":
        ok = reproduce_fig1_right(out, seed, trials=args.trials or 1000)
    elif args.panel == "memory-table":
        ok = reproduce_memory_table(out, seed)
    elif args.panel == "traffic":
        ok = reproduce_traffic(out, seed)
    else:
        raise InputError(f"unknown panel {args.panel!r} (want one of {PANELS})")
    if not ok:
        raise AcceptanceError(f"panel {args.panel} failed its acceptance check")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subzero",
        description="Zeroth-order optimization with subspace perturbations: "
        "testbed generators, alignment statistics, optimizer runs, and "
        "reproduction bundles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-hessian", help="write a synthetic Hessian file")
    g.add_argument("--out", required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--rank", type=int, required=True)
    g.add_argument("--blocks", type=int, default=1)
    g.add_argument("--max-eig", default="10", help="per-block leading eigenvalues, comma separated")
    g.add_argument("--hetero", default=None,
                   help="reference levels, e.g. 10,40,70,100: integer spectra within +-2 of a sampled level")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_hessian)

    m = sub.add_parser("measure-alignment", help="sample alignment distributions")
    m.add_argument("--hessian", required=True)
    m.add_argument("--ensembles", default="lowrank,sparse,blocksparse")
    m.add_argument("--sranks", default="16,32,64,128,256")
    m.add_argument("--trials", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_measure_alignment)

    o = sub.add_parser("optimize", help="run optimizers over sweep axes")
    o.add_argument("--config", default=None, help="flat key = value file; flags override")
    o.add_argument("--method", choices=("zo-sgd", "mezo-bcd", "mezo-bcd-adam", "adaptive"))
    o.add_argument("--hessian")
    o.add_argument("--logistic", help="e.g. n=2000,d=200,batch=64,seed=0")
    o.add_argument("--mu", type=float)
    o.add_argument("--lr", type=float)
    o.add_argument("--lr-schedule", dest="lr_schedule", choices=("constant", "inverse-t"))
    o.add_argument("--steps", type=int)
    o.add_argument("--order", choices=("ascending", "descending", "flipflop", "cyclic-random"))
    o.add_argument("--blocks", type=int)
    o.add_argument("--ensemble",
                   choices=("identity", "lowrank", "sparse", "blocksparse", "controlled"))
    o.add_argument("--srank", type=int)
    o.add_argument("--gamma", type=float)
    o.add_argument("--gammas", help="sweep axis, comma separated")
    o.add_argument("--seeds", help="master seeds, comma separated, distinct")
    o.add_argument("--rho-every", dest="rho_every", type=int)
    o.add_argument("--adam-interval", dest="adam_interval", type=int)
    o.add_argument("--init", choices=("gauss", "zeros"))
    o.add_argument("--init-scale", dest="init_scale", type=float)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_optimize)

    r = sub.add_parser("reproduce", help="one-command panel pipelines with verdicts")
    r.add_argument("panel", choices=PANELS)
    r.add_argument("--out", default=None)
    r.add_argument("--master-seed", dest="master_seed", type=int, default=1)
    r.add_argument("--steps", type=int, default=None, help="override run length (smoke testing)")
    r.add_argument("--seeds", type=int, default=None, help="override seed count (smoke testing)")
    r.add_argument("--trials", type=int, default=None, help="override trial count (smoke testing)")
    r.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3
    except AcceptanceError as err:
        print(f"acceptance failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
