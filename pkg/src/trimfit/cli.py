"""Experiment runner: run / compare / gen / homography subcommands.

Configs are INI files with sections [problem], [solver], [plan], [schedule],
[stop], [output]; schedule fields may be "auto" to use the theorem-driven
values for the plan's variant. Every run is reproducible from
(config, seed): repeated invocations write byte-identical trajectory CSVs.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import data as datamod
from . import stepsize
from .core import objective
from .problems import (
    TrimmedHomography,
    TrimmedLS,
    TrimmedPCA,
    TrimmedSoftmax,
    homography_alignment_error,
    refine_homography,
)
from .smart import (
    SamplingPlan,
    StepSizeSchedule,
    StopRule,
    default_batch_size,
    run,
    run_palm,
    run_pspg,
    run_sg,
    theory_schedule,
)

TRAJECTORY_COLUMNS = (
    "k,epoch,F,stat_weighted,stat_w,stat_x,"
    "grad_evals,fun_evals,prox1_evals,prox2_evals"
)

COMPARE_SOLVERS = ("smart_saga", "smart_svrg", "palm", "sg")


class ConfigError(ValueError):
    """Invalid or missing configuration; message names the field."""


def _get(cfg, section, key, cast=str, default=None, required=False):
    if not cfg.has_section(section) and required:
        raise ConfigError(f"missing section [{section}]")
    if not cfg.has_option(section, key):
        if required:
            raise ConfigError(f"missing field '{key}' in section [{section}]")
        return default
    raw = cfg.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError:
        raise ConfigError(f"field '{key}' in section [{section}]: cannot parse {raw!r}")


def _resolve_h(cfg, n, outlier_frac):
    h = _get(cfg, "problem", "h", int)
    keep_frac = _get(cfg, "problem", "keep_frac", float)
    over = _get(cfg, "problem", "over_estimate", bool, default=False)
    if h is not None:
        return h
    if keep_frac is not None:
        return int(round(keep_frac * n))
    if over:
        if outlier_frac is None:
            raise ConfigError(
                "field 'over_estimate' in section [problem] needs 'outlier_frac'"
            )
        return datamod.overestimated_keep_count(n, outlier_frac)
    raise ConfigError("section [problem] needs one of 'h', 'keep_frac', 'over_estimate'")


def build_problem(cfg):
    """Returns (dataset, instance, truth_mask or None, extras dict)."""
    kind = _get(cfg, "problem", "kind", required=True)
    path = _get(cfg, "problem", "data")
    mask_path = _get(cfg, "problem", "mask")
    gen_seed = _get(cfg, "problem", "gen_seed", int, default=0)
    outlier_frac = _get(cfg, "problem", "outlier_frac", float)
    mask = datamod.load_mask_csv(mask_path) if mask_path else None
    extras = {}

    if kind == "ls":
        if path:
            features, targets = datamod.load_csv(path, "regression")
            h = _resolve_h(cfg, len(targets), outlier_frac)
            dataset = TrimmedLS(features, targets, h=h)
        else:
            n = _get(cfg, "problem", "n", int, required=True)
            p = _get(cfg, "problem", "p", int, required=True)
            frac = outlier_frac if outlier_frac is not None else 0.0
            noise_sd = _get(cfg, "problem", "noise_sd", float, default=0.1)
            dataset, gen_mask, x_true = datamod.gen_trimmed_ls(
                n, p, frac, noise_sd, gen_seed
            )
            dataset.h = _resolve_h(cfg, n, frac)
            mask = gen_mask if mask is None else mask
            extras["x_true"] = x_true
    elif kind == "softmax":
        ridge = _get(cfg, "problem", "ridge", float, default=0.0)
        if path:
            features, labels, num_classes = datamod.load_csv(path, "classification")
        else:
            n = _get(cfg, "problem", "n", int, required=True)
            p = _get(cfg, "problem", "p", int, required=True)
            num_classes = _get(cfg, "problem", "num_classes", int, required=True)
            features, labels, _ = datamod.gen_softmax_classification(
                n, p, num_classes, gen_seed
            )
            frac = outlier_frac if outlier_frac is not None else 0.0
            labels, gen_mask = datamod.contaminate_labels(
                labels, frac, num_classes, gen_seed + 1
            )
            mask = gen_mask if mask is None else mask
        h = _resolve_h(cfg, len(labels), outlier_frac)
        dataset = TrimmedSoftmax(features, labels, num_classes, h=h, ridge=ridge)
    elif kind == "pca":
        rank = _get(cfg, "problem", "rank", int, required=True)
        if path:
            standardize = _get(cfg, "problem", "standardize", bool, default=False)
            cols = datamod.load_csv(path, "matrix", standardize_rows=standardize)
        else:
            m = _get(cfg, "problem", "m", int, required=True)
            n = _get(cfg, "problem", "n", int, required=True)
            frac = outlier_frac if outlier_frac is not None else 0.0
            cols, gen_mask = datamod.gen_pca_columns(m, n, rank, frac, gen_seed)
            mask = gen_mask if mask is None else mask
        h = _resolve_h(cfg, cols.shape[1], outlier_frac)
        dataset = TrimmedPCA(cols, rank=rank, h=h)
    elif kind == "homography":
        if path:
            b1, b2 = datamod.load_csv(path, "homography")
        else:
            n = _get(cfg, "problem", "n", int, required=True)
            frac = outlier_frac if outlier_frac is not None else 0.0
            b1, b2, h_true, gen_mask = datamod.gen_homography_scene(n, frac, gen_seed)
            mask = gen_mask if mask is None else mask
            extras["h_true"] = h_true
        h_true_path = _get(cfg, "problem", "h_true")
        if h_true_path:
            extras["h_true"] = datamod.load_csv(h_true_path, "matrix")
        h = _resolve_h(cfg, b1.shape[0], outlier_frac)
        dataset = TrimmedHomography(b1, b2, h=h)
    else:
        raise ConfigError(f"field 'kind' in section [problem]: unknown kind {kind!r}")

    return dataset, dataset.build(), mask, extras


def build_plan(cfg, n, seed_override=None, policy_override=None):
    policy = policy_override or _get(cfg, "plan", "policy", default="saga")
    raw_b = _get(cfg, "plan", "b", default="auto")
    b = default_batch_size(n) if raw_b == "auto" else int(raw_b)
    seed = _get(cfg, "plan", "seed", int, default=0)
    if seed_override is not None:
        seed = seed_override
    raw_q = _get(cfg, "plan", "q", default="auto")
    q = None if raw_q == "auto" else float(raw_q)
    if policy == "saga":
        return SamplingPlan.saga(n, b, seed=seed, q=q)
    if policy == "svrg":
        return SamplingPlan.svrg(n, b, seed=seed, q=q)
    if policy == "full":
        return SamplingPlan.full(n, seed=seed, q=0.5 if q is None else q)
    raise ConfigError(f"field 'policy' in section [plan]: unknown policy {policy!r}")


def build_schedule(cfg, problem, plan):
    rate = _get(cfg, "schedule", "rate", default="sublinear")
    epsilon0 = _get(cfg, "schedule", "epsilon0", float, default=0.5)
    raw = {key: _get(cfg, "schedule", key, default="auto") for key in ("gamma", "eta", "tau")}
    if rate not in ("sublinear", "linear"):
        raise ConfigError(f"field 'rate' in section [schedule]: got {rate!r}")
    if all(v == "auto" for v in raw.values()):
        return theory_schedule(problem, plan, epsilon0=epsilon0, rate=rate)
    gamma_fn = stepsize.gamma_sublinear if rate == "sublinear" else stepsize.gamma_linear
    eta_fn = stepsize.eta_sublinear if rate == "sublinear" else stepsize.eta_linear
    gamma = gamma_fn(plan, problem, epsilon0) if raw["gamma"] == "auto" else float(raw["gamma"])
    eta = eta_fn(plan, problem, epsilon0, gamma) if raw["eta"] == "auto" else float(raw["eta"])
    if raw["tau"] == "auto":
        tau = stepsize.tau_for_variant(
            plan.policy, gamma, eta, plan.n, plan.b, problem.reg_w.prox_guard
        )
    else:
        tau = float(raw["tau"])
    return StepSizeSchedule(gamma=gamma, tau=tau, eta=eta, epsilon0=epsilon0)


def build_stop(cfg):
    max_epochs = _get(cfg, "stop", "max_epochs", float, required=True)
    tol = _get(cfg, "stop", "stationarity_tol", float, default=0.0)
    log_every = _get(cfg, "stop", "log_every", float, default=1.0)
    max_iters = _get(cfg, "stop", "max_iters", int)
    return StopRule(
        max_epochs=max_epochs,
        stationarity_tol=tol if tol and tol > 0 else None,
        log_every=log_every,
        max_iters=max_iters,
    )


def _solve(method, problem, cfg, seed_override=None):
    if method == "smart":
        plan = build_plan(cfg, problem.n, seed_override)
        schedule = build_schedule(cfg, problem, plan)
        return run(problem, plan, schedule, build_stop(cfg)), plan
    full_plan = build_plan(cfg, problem.n, seed_override, policy_override="full")
    if method == "palm":
        schedule = build_schedule(cfg, problem, full_plan)
        return run_palm(problem, schedule, build_stop(cfg), seed=full_plan.seed), full_plan
    if method == "pspg":
        schedule = build_schedule(cfg, problem, full_plan)
        return run_pspg(problem, schedule, build_stop(cfg), seed=full_plan.seed), full_plan
    if method == "sg":
        plan = build_plan(cfg, problem.n, seed_override)
        schedule = build_schedule(cfg, problem, plan)
        return run_sg(problem, plan, schedule, build_stop(cfg)), plan
    raise ConfigError(f"field 'method' in section [solver]: unknown method {method!r}")


def write_trajectory(path, record):
    lines = [TRAJECTORY_COLUMNS]
    for row in record.rows:
        lines.append(
            ",".join(
                [
                    str(row.k),
                    repr(row.epoch),
                    repr(row.objective),
                    repr(row.stat_weighted),
                    repr(row.stat_w),
                    repr(row.stat_x),
                    str(row.grad_evals),
                    str(row.fun_evals),
                    str(row.prox_w_evals),
                    str(row.prox_x_evals),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _config_echo(cfg):
    return {section: dict(cfg.items(section)) for section in cfg.sections()}


def cmd_run(cfg, out_dir, seed_override=None):
    dataset, problem, mask, _ = build_problem(cfg)
    method = _get(cfg, "solver", "method", default="smart")
    start = time.perf_counter()
    (record, state), plan = _solve(method, problem, cfg, seed_override)
    wall = time.perf_counter() - start
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory(out_dir / "trajectory.csv", record)
    summary = {
        "final_objective": record.final_row.objective,
        "best_objective": record.best_objective,
        "wall_time": wall,
        "seed": plan.seed,
        "config": _config_echo(cfg),
    }
    if mask is not None:
        detection, false_positive = datamod.score_detection(state.w, mask, dataset.h)
        summary["detection_rate"] = detection
        summary["false_positive_rate"] = false_positive
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_compare(cfg, out_dir, seed_override=None):
    """Run the solver suite on one problem and emit per-epoch relative errors.

    The reference value is the lowest objective achieved across all runs;
    the error column is (F - f_star) / f_star, logged once per epoch.
    """
    dataset, problem, mask, _ = build_problem(cfg)
    raw = _get(cfg, "compare", "solvers", default=",".join(COMPARE_SOLVERS))
    solvers = [s.strip() for s in raw.split(",") if s.strip()]
    raw_seeds = _get(cfg, "compare", "seeds")
    if raw_seeds is not None:
        seeds = [int(s) for s in raw_seeds.split(",")]
    else:
        seeds = [seed_override if seed_override is not None else _get(cfg, "plan", "seed", int, default=0)]
    runs = []
    for seed in seeds:
        for solver in solvers:
            if solver == "smart_saga":
                plan = build_plan(cfg, problem.n, seed, policy_override="saga")
                schedule = build_schedule(cfg, problem, plan)
                record, _ = run(problem, plan, schedule, build_stop(cfg))
            elif solver == "smart_svrg":
                plan = build_plan(cfg, problem.n, seed, policy_override="svrg")
                schedule = build_schedule(cfg, problem, plan)
                record, _ = run(problem, plan, schedule, build_stop(cfg))
            elif solver == "palm":
                (record, _), _ = _solve("palm", problem, cfg, seed)
            elif solver == "sg":
                (record, _), _ = _solve("sg", problem, cfg, seed)
            else:
                raise ConfigError(
                    f"field 'solvers' in section [compare]: unknown solver {solver!r}"
                )
            runs.append((solver, seed, record))
    f_star = min(record.best_objective for _, _, record in runs)
    denom = max(abs(f_star), 1e-15)
    lines = ["solver,seed,epoch,F,rel_error,grad_evals"]
    for solver, seed, record in runs:
        for row in record.rows:
            rel = (row.objective - f_star) / denom
            lines.append(
                f"{solver},{seed},{row.epoch!r},{row.objective!r},{rel!r},{row.grad_evals}"
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n")
    (out_dir / "compare_summary.json").write_text(
        json.dumps(
            {"f_star": f_star, "solvers": solvers, "seeds": seeds, "config": _config_echo(cfg)},
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_gen(cfg, out_dir, seed_override=None):
    kind = _get(cfg, "problem", "kind", required=True)
    gen_seed = _get(cfg, "problem", "gen_seed", int, default=0)
    if seed_override is not None:
        gen_seed = seed_override
    outlier_frac = _get(cfg, "problem", "outlier_frac", float, default=0.0)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "ls":
        n = _get(cfg, "problem", "n", int, required=True)
        p = _get(cfg, "problem", "p", int, required=True)
        noise_sd = _get(cfg, "problem", "noise_sd", float, default=0.1)
        dataset, mask, _ = datamod.gen_trimmed_ls(n, p, outlier_frac, noise_sd, gen_seed)
        datamod.save_regression_csv(out_dir / "dataset.csv", dataset.features, dataset.targets)
    elif kind == "softmax":
        n = _get(cfg, "problem", "n", int, required=True)
        p = _get(cfg, "problem", "p", int, required=True)
        num_classes = _get(cfg, "problem", "num_classes", int, required=True)
        features, labels, _ = datamod.gen_softmax_classification(n, p, num_classes, gen_seed)
        labels, mask = datamod.contaminate_labels(labels, outlier_frac, num_classes, gen_seed + 1)
        datamod.save_classification_csv(out_dir / "dataset.csv", features, labels)
    elif kind == "pca":
        m = _get(cfg, "problem", "m", int, required=True)
        n = _get(cfg, "problem", "n", int, required=True)
        rank = _get(cfg, "problem", "rank", int, required=True)
        cols, mask = datamod.gen_pca_columns(m, n, rank, outlier_frac, gen_seed)
        datamod.save_matrix_csv(out_dir / "dataset.csv", cols)
    elif kind == "homography":
        n = _get(cfg, "problem", "n", int, required=True)
        b1, b2, h_true, mask = datamod.gen_homography_scene(n, outlier_frac, gen_seed)
        datamod.save_correspondences_csv(out_dir / "dataset.csv", b1, b2)
        datamod.save_matrix_csv(out_dir / "h_true.csv", h_true)
    else:
        raise ConfigError(f"field 'kind' in section [problem]: unknown kind {kind!r}")
    datamod.save_mask_csv(out_dir / "mask.csv", mask)
    return 0


def cmd_homography(cfg, out_dir, seed_override=None):
    dataset, problem, mask, extras = build_problem(cfg)
    if not isinstance(dataset, TrimmedHomography):
        raise ConfigError("field 'kind' in section [problem]: cmd homography needs kind=homography")
    method = _get(cfg, "solver", "method", default="smart")
    (record, state), plan = _solve(method, problem, cfg, seed_override)
    refined = refine_homography(state, dataset)
    kept = np.flatnonzero(state.w > 1e-8)
    out_dir.mkdir(parents=True, exist_ok=True)
    datamod.save_matrix_csv(out_dir / "refined_h.csv", refined)
    Path(out_dir / "kept_indices.csv").write_text(
        "index\n" + "\n".join(str(int(i)) for i in kept) + "\n"
    )
    summary = {
        "final_objective": record.final_row.objective,
        "kept": [int(i) for i in kept],
        "seed": plan.seed,
        "config": _config_echo(cfg),
    }
    if "h_true" in extras:
        summary["h_error"] = homography_alignment_error(refined, extras["h_true"])
    if mask is not None:
        detection, false_positive = datamod.score_detection(state.w, mask, dataset.h)
        summary["detection_rate"] = detection
        summary["false_positive_rate"] = false_positive
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "gen": cmd_gen,
    "homography": cmd_homography,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trimfit", description="Trimmed model fitting experiment runner"
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="INI config path")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)

    cfg = configparser.ConfigParser(interpolation=None)
    read = cfg.read(args.config)
    if not read:
        print(f"error: cannot read config {args.config}", file=sys.stderr)
        return 2
    try:
        out_dir = Path(args.out) if args.out else Path(_get(cfg, "output", "dir", default="out"))
        return COMMANDS[args.command](cfg, out_dir, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver/data errors: report, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
