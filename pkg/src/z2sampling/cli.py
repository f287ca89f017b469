"""Experiment command line.

Subcommands map one-to-one onto the checks the library exposes:

  verify-duality    coefficient duality residuals over random schedules
  collapse-check    translation vs explicit down-up composition, both forward forms
  order-sweep       first-order surrogate error, second-order local truncation error
  bea-check         modified-equation agreement order for the zigzag Euler map
  sample            run one trajectory, or sweep a sampler parameter over seeds

Exit codes: 0 success, 1 check failed (the message names the violated
identity), 2 configuration or usage error.  Z2_THREADS caps worker threads
for multi-run sweeps; results are collected in canonical order so thread
count never changes any output byte.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import EFFECTIVE_FIELD_FORMS, AffineVelocityPair, bea_agreement, lte_order_sweep
from .config import (
    ConfigError,
    build_field_pair,
    build_sampler_config,
    build_schedule,
    load_config,
    require_sections,
)
from .reporting import write_fit_csv, write_frontier_csv, write_steps_csv, write_summary_json
from .samplers import SamplerConfig, implicit_collapse, run_trajectory
from .schedule import Schedule, make_linear_flow, make_linear_vp, vp_to_spherical
from .solver import LatentState, SolverCoefficients, check_duality, coefficients, forward_step, inverse_step, schedule_duality_residuals
from .scorefield import GuidedPrediction

__all__ = ["main"]

SWEEP_PARAMETERS = {"gamma1": float, "gamma2": float, "warmup": int, "zigzag_steps": int}


def _thread_count() -> int:
    raw = os.environ.get("Z2_THREADS")
    if raw is None:
        return min(8, os.cpu_count() or 1)
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"Z2_THREADS must be a positive integer, got {raw!r}")
    if threads < 1:
        raise ConfigError(f"Z2_THREADS must be a positive integer, got {raw!r}")
    return threads


def _parallel_map(fn, items, threads: int) -> list:
    """Ordered map; the thread pool changes wall time, never results."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _prefix_path(prefix: str, suffix: str) -> Path:
    return Path(str(prefix) + suffix)


def _random_schedule(rng: np.random.Generator, kind: str, max_t: int) -> Schedule:
    T = int(rng.integers(2, max_t + 1))
    if kind == "flow":
        return make_linear_flow(T, float(rng.uniform(0.3, 1.0)))
    vp = make_linear_vp(T, float(rng.uniform(0.85, 0.9999)), float(rng.uniform(1e-4, 0.2)))
    return vp if kind == "vp" else vp_to_spherical(vp)


def cmd_verify_duality(cfg: dict, out: str, threads: int) -> int:
    section = cfg.get("duality", {})
    num = section.get("num_schedules", 1000)
    max_t = section.get("max_T", 200)
    tol = section.get("tolerance", 1e-12)
    rng = np.random.default_rng(cfg.get("seed", 0))
    worst = {}
    for kind in ("vp", "flow", "spherical"):
        residual = 0.0
        for _ in range(num):
            residual = max(residual, float(schedule_duality_residuals(_random_schedule(rng, kind, max_t)).max()))
        worst[kind] = residual
        print(f"{kind}: worst duality residual {residual:.3e} over {num} random schedules")
    failure = None
    if "schedule" in cfg:
        s = build_schedule(cfg)
        res = schedule_duality_residuals(s)
        fault = section.get("fault")
        if fault is not None:
            step = fault.get("step")
            if not isinstance(step, int) or not 1 <= step <= s.T:
                raise ConfigError(f"duality.fault.step must be in 1..{s.T}")
            c = coefficients(s, step)
            bad = SolverCoefficients(c.a, c.b, c.a_inv, c.c + float(fault.get("offset", 0.1)), step)
            res[step - 1] = check_duality(bad)
        step = int(np.argmax(res.max(axis=1))) + 1
        configured_worst = float(res.max())
        worst["configured"] = configured_worst
        print(f"configured {s.kind.value} schedule: worst residual {configured_worst:.3e} at step {step}")
        if configured_worst > tol:
            failure = (
                f"duality violated at step {step} of the configured schedule: "
                f"residual {configured_worst:.3e} exceeds {tol:.1e} "
                f"(the identities inverse_gain*offset + inverse_offset = 0 and "
                f"gain*inverse_offset + offset = 0 must both hold)"
            )
    passed = failure is None and max(worst.values()) <= tol
    write_summary_json(_prefix_path(out, ".summary.json"), {
        "command": "verify-duality", "config": cfg, "worst_residuals": worst,
        "tolerance": tol, "passed": passed, "failure": failure,
    })
    if failure is not None:
        print(failure)
    elif not passed:
        print(f"duality check FAILED: worst residual {max(worst.values()):.3e} exceeds {tol:.1e}")
    else:
        print("duality check passed")
    return 0 if passed else 1


def cmd_collapse_check(cfg: dict, out: str, threads: int) -> int:
    section = cfg.get("collapse", {})
    num = section.get("num_cases", 10000)
    dim = section.get("dim", 64)
    gamma_max = section.get("gamma1_max", 12.0)
    tol = section.get("tolerance", 1e-10)
    rng = np.random.default_rng(cfg.get("seed", 0))
    kinds = ("vp", "flow", "spherical")
    worst_translation = 0.0
    worst_forward = 0.0
    for i in range(num):
        s = _random_schedule(rng, kinds[i % 3], 8)
        t = int(rng.integers(1, s.T + 1))
        c = coefficients(s, t)
        x = rng.standard_normal(dim)
        eps_u = rng.standard_normal(dim)
        delta = rng.standard_normal(dim)
        gamma1 = float(rng.uniform(0.0, gamma_max))
        pred = GuidedPrediction(eps_u, eps_u + delta, delta, gamma1)
        state = LatentState(x, t)
        translated = implicit_collapse(state, c, pred)
        down = forward_step(c, state, pred.guided)
        back = inverse_step(c, down, pred.eps_uncond)
        rel = float(np.linalg.norm(translated.x - back.x) / (1.0 + np.linalg.norm(back.x)))
        worst_translation = max(worst_translation, rel)
        # Both single-step forward forms, from the anchor and from the
        # translated point, must agree through the gain/offset duality.
        pred_tilde = rng.standard_normal(dim)
        form_anchor = forward_step(c, state, pred_tilde + gamma1 * delta)
        form_translated = forward_step(c, translated, pred_tilde)
        rel = float(np.linalg.norm(form_anchor.x - form_translated.x) / (1.0 + np.linalg.norm(form_anchor.x)))
        worst_forward = max(worst_forward, rel)
    passed = worst_translation <= tol and worst_forward <= tol
    write_summary_json(_prefix_path(out, ".summary.json"), {
        "command": "collapse-check", "config": cfg, "num_cases": num, "dim": dim,
        "worst_translation_residual": worst_translation,
        "worst_forward_equivalence_residual": worst_forward,
        "tolerance": tol, "passed": passed,
    })
    print(f"translation vs down-up composition: worst relative residual {worst_translation:.3e}")
    print(f"anchor vs translated forward form: worst relative residual {worst_forward:.3e}")
    if passed:
        print(f"collapse check passed over {num} cases (tolerance {tol:.1e})")
        return 0
    print(
        f"collapse check FAILED: the noise-space translation x - c*gamma1*delta must "
        f"reproduce the explicit denoise/re-noise composition (tolerance {tol:.1e})"
    )
    return 1


def cmd_order_sweep(cfg: dict, out: str, threads: int) -> int:
    require_sections(cfg, ("field",), "order-sweep")
    section = cfg.get("order_sweep", {})
    span = section.get("span", 0.8)
    step_counts = section.get("step_counts", [50, 100, 200, 400, 800])
    gamma1 = section.get("gamma1", 2.0)
    min_r2 = section.get("min_r_squared", 0.95)
    drop = section.get("drop_largest", 0)
    if not isinstance(step_counts, list) or len(step_counts) - drop < 4:
        raise ConfigError("order_sweep.step_counts must leave at least 4 step sizes after drop_largest")
    pair = build_field_pair(cfg)
    rng = np.random.default_rng(cfg.get("seed", 0))
    x_init = rng.standard_normal(pair.conditional.dim)
    try:
        result = lte_order_sweep(
            pair, gamma1, span, step_counts, x_init,
            warmup_frac=section.get("warmup_frac", 0.1),
            tail_frac=section.get("tail_frac", 0.05),
            inject_exact_surrogate=section.get("inject_exact_surrogate", False),
            drop_largest=drop,
        )
    except ValueError as exc:
        if "degenerate" in str(exc):
            # An exact surrogate leaves no truncation error to fit; flagging
            # beats reporting a meaningless slope of log(noise).
            print(f"order sweep FAILED: {exc}")
            write_summary_json(_prefix_path(out, ".summary.json"), {
                "command": "order-sweep", "config": cfg, "passed": False, "failure": str(exc),
            })
            return 1
        raise ConfigError(str(exc))
    write_fit_csv(_prefix_path(out, ".fit.csv"), [("e_tss", result.e_tss_fit), ("lte", result.lte_fit)])
    passed = result.e_tss_fit.r_squared >= min_r2 and result.lte_fit.r_squared >= min_r2
    write_summary_json(_prefix_path(out, ".summary.json"), {
        "command": "order-sweep", "config": cfg,
        "e_tss": {"slope": result.e_tss_fit.slope, "r_squared": result.e_tss_fit.r_squared},
        "lte": {"slope": result.lte_fit.slope, "r_squared": result.lte_fit.r_squared},
        "min_r_squared": min_r2, "passed": passed,
    })
    print(f"surrogate error: slope {result.e_tss_fit.slope:.3f}, r^2 {result.e_tss_fit.r_squared:.5f}")
    print(f"local truncation error: slope {result.lte_fit.slope:.3f}, r^2 {result.lte_fit.r_squared:.5f}")
    if passed:
        print("order sweep passed")
        return 0
    print(f"order sweep FAILED: log-log fit r^2 below {min_r2} (errors are not clean power laws)")
    return 1


def cmd_bea_check(cfg: dict, out: str, threads: int) -> int:
    section = cfg.get("bea", {})
    span = section.get("span", 1.0)
    step_sizes = section.get("step_sizes", [0.1 / 2**k for k in range(6)])
    gamma1 = section.get("gamma1", 3.0)
    form = section.get("form", "full_first_order")
    if form not in EFFECTIVE_FIELD_FORMS:
        raise ConfigError(f"bea.form must be one of {sorted(EFFECTIVE_FIELD_FORMS)}")
    affine = section.get("affine", {})
    fields = AffineVelocityPair(
        np.array(affine.get("m_uncond", [[0.4]]), dtype=float),
        np.array(affine.get("q_uncond", [0.3]), dtype=float),
        np.array(affine.get("m_delta", [[-0.25]]), dtype=float),
        np.array(affine.get("r_delta", [0.8]), dtype=float),
    )
    x0 = np.array(section.get("x0", [0.6]), dtype=float)
    ref_divisor = section.get("ref_divisor", 100)
    drop = section.get("drop_largest", 0)
    main = bea_agreement(fields, x0, gamma1, span, step_sizes, form=form, ref_divisor=ref_divisor, drop_largest=drop)
    fits = [(f"bea_{form}", main.fit)]
    control = None
    if section.get("control", True):
        control = bea_agreement(fields, x0, 0.0, span, step_sizes, form="penalty_only",
                                ref_divisor=ref_divisor, drop_largest=drop)
        fits.append(("bea_control_gamma1_zero", control.fit))
    write_fit_csv(_prefix_path(out, ".fit.csv"), fits)
    min_slope = section.get("min_slope", 1.8)
    min_r2 = section.get("min_r_squared", 0.95)
    ctrl_lo, ctrl_hi = section.get("slope_range_control", [0.8, 1.2])
    passed = main.fit.slope >= min_slope and main.fit.r_squared >= min_r2
    print(f"{form}: deviation slope {main.fit.slope:.3f}, r^2 {main.fit.r_squared:.5f}")
    if control is not None:
        passed = passed and ctrl_lo <= control.fit.slope <= ctrl_hi
        print(f"gamma1=0 control (penalty_only): slope {control.fit.slope:.3f}, r^2 {control.fit.r_squared:.5f}")
    write_summary_json(_prefix_path(out, ".summary.json"), {
        "command": "bea-check", "config": cfg, "form": form,
        "slope": main.fit.slope, "r_squared": main.fit.r_squared,
        "control_slope": None if control is None else control.fit.slope,
        "min_slope": min_slope, "passed": passed,
    })
    if passed:
        print("modified-equation agreement check passed")
        return 0
    print(
        f"bea check FAILED: trajectory deviation from the h-dependent effective field must "
        f"shrink at order >= {min_slope} (got slope {main.fit.slope:.3f})"
    )
    return 1


def _terminal_log_density(record, schedule: Schedule, pair) -> float:
    a, b = schedule.marginal_scales(0)
    return float(pair.conditional.log_density(record.terminal.x, a, b))


def cmd_sample(cfg: dict, out: str, threads: int) -> int:
    require_sections(cfg, ("schedule", "field", "sampler"), "sample")
    s = build_schedule(cfg)
    pair = build_field_pair(cfg)
    base = build_sampler_config(cfg)
    seed = cfg.get("seed", 0)
    runs = cfg.get("runs", 1)
    if "sweep" not in cfg:
        start = time.perf_counter()
        try:
            record = run_trajectory(base, s, pair, seed=seed)
        except ValueError as exc:
            raise ConfigError(str(exc))
        wall_clock = time.perf_counter() - start
        log_density = _terminal_log_density(record, s, pair)
        write_steps_csv(_prefix_path(out, ".steps.csv"), record, s)
        # Wall clock lives only in the JSON summary; CSV bodies stay
        # byte-identical across reruns.
        write_summary_json(_prefix_path(out, ".summary.json"), {
            "command": "sample", "config": cfg, "variant": record.variant.value,
            "nfe": record.nfe, "seed": record.seed,
            "terminal_log_density": log_density,
            "wall_clock_seconds": wall_clock,
            "trajectory": record.to_json_dict(),
        })
        print(f"{record.variant.value}: {s.T} steps, nfe {record.nfe}, terminal log density {log_density:.6f}")
        return 0

    sweep_start = time.perf_counter()
    sweep = cfg["sweep"]
    parameter = sweep.get("parameter")
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep.parameter must be one of {sorted(SWEEP_PARAMETERS)}")
    values = sweep.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values must be a non-empty list")
    cast = SWEEP_PARAMETERS[parameter]
    rows = []
    for value in values:
        if cast is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"sweep over {parameter} requires integer values, got {value!r}")
        try:
            sampler_cfg = replace(base, **{parameter: cast(value)})
        except ValueError as exc:
            raise ConfigError(str(exc))

        def one(i: int, sampler_cfg: SamplerConfig = sampler_cfg):
            record = run_trajectory(sampler_cfg, s, pair, seed=seed + i)
            return record.nfe, _terminal_log_density(record, s, pair)

        try:
            results = _parallel_map(one, range(runs), threads)
        except ValueError as exc:
            raise ConfigError(str(exc))
        nfes = {nfe for nfe, _ in results}
        if len(nfes) != 1:
            raise AssertionError(f"nfe must be seed-independent, saw {sorted(nfes)} at {parameter}={value}")
        densities = np.array([ld for _, ld in results])
        se = float(densities.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
        rows.append({
            "variant": base.variant.value, "parameter": parameter, "value": value,
            "nfe": nfes.pop(), "mean_log_density": float(densities.mean()),
            "se_log_density": se, "runs": runs,
        })
        print(f"{parameter}={value}: nfe {rows[-1]['nfe']}, "
              f"mean terminal log density {rows[-1]['mean_log_density']:.6f} "
              f"(se {rows[-1]['se_log_density']:.6f}, {runs} runs)")
    write_frontier_csv(_prefix_path(out, ".frontier.csv"), rows)
    write_summary_json(_prefix_path(out, ".summary.json"), {
        "command": "sample", "config": cfg, "sweep": rows,
        "wall_clock_seconds": time.perf_counter() - sweep_start,
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="z2",
        description="Single-step collapse of zigzag guided sampling: checks and experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "verify-duality": (cmd_verify_duality, "check solver coefficient duality on random and configured schedules"),
        "collapse-check": (cmd_collapse_check, "check the noise-space translation against the explicit composition"),
        "order-sweep": (cmd_order_sweep, "measure surrogate and local truncation error orders"),
        "bea-check": (cmd_bea_check, "measure agreement order against the h-dependent effective field"),
        "sample": (cmd_sample, "run one trajectory or sweep a sampler parameter"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output path prefix for .csv/.json artifacts")
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        threads = _thread_count()
        return args.func(cfg, args.out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
