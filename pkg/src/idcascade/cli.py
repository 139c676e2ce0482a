"""Command-line front-end.

Subcommands: theory (closed-form diagnostics), simulate (replica files),
verify (invariant suite), estimate (statistical reports).  Configuration
comes from an INI-style file; the global flags --seed, --threads, --out and
--format override it.  Exit codes: 0 success, 1 failed verification check,
2 configuration error, 3 runtime/sampler error.

Only the standard library is imported at module level so that --threads can
cap the BLAS pools before numpy first loads.
"""

import argparse
import json
import math
import os
import sys


def _build_parser():
    p = argparse.ArgumentParser(
        prog="idcascade",
        description="simulation and verification engine for exactly "
                    "scale-invariant log-infinitely divisible cascades")
    p.add_argument("--config", help="path to an INI-style run configuration")
    p.add_argument("--seed", type=int, help="override experiment.seed")
    p.add_argument("--threads", type=int,
                   help="bound the worker/BLAS thread count")
    p.add_argument("--out", help="override output.directory")
    p.add_argument("--format", choices=("csv", "json", "both"),
                   help="override output.formats")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("theory", help="write the closed-form diagnostics report")
    sub.add_parser("simulate", help="simulate replicas and write files")
    sub.add_parser("verify", help="run the configured invariant checks")
    sub.add_parser("estimate", help="run a statistical estimation experiment")
    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(max(1, args.threads))

    from .config import ConfigError, RunConfig, load_config

    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed", "must be unsigned 64-bit")
            cfg.set("experiment", "seed", args.seed)
        if args.out is not None:
            cfg.set("output", "directory", args.out)
        if args.format is not None:
            cfg.set("output", "formats", args.format)
        return _dispatch(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # sampler / runtime failures
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def _dispatch(command, cfg):
    if command == "theory":
        return cmd_theory(cfg)
    if command == "simulate":
        return cmd_simulate(cfg)
    if command == "verify":
        return cmd_verify(cfg)
    if command == "estimate":
        return cmd_estimate(cfg)
    raise AssertionError(command)


def _outdir(cfg):
    path = cfg.output_dir()
    os.makedirs(path, exist_ok=True)
    return path


def _stamp(cfg):
    from .config import config_hash
    return {"config_hash": config_hash(cfg), "seed": cfg.seed()}


def _write_json(cfg, name, payload):
    path = os.path.join(_outdir(cfg), name)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _csv_header(cfg):
    s = _stamp(cfg)
    return f"# config_hash={s['config_hash']} seed={s['seed']}\n"


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_csv(cfg, name, columns, rows):
    path = os.path.join(_outdir(cfg), name)
    with open(path, "w") as fh:
        fh.write(_csv_header(cfg))
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _progress(total):
    def tick(done):
        print(f"\rreplica {done}/{total}", end="", file=sys.stderr,
              flush=True)
    return tick


def _progress_done(total):
    print(f"\rreplica {total}/{total}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_theory(cfg):
    from .levy import diagnose
    model = cfg.build_model()
    report = diagnose(model)
    payload = json.loads(report.to_json())
    payload.update(_stamp(cfg))
    path = _write_json(cfg, "diagnostics.json", payload)
    print(path)
    return 0


def cmd_simulate(cfg):
    import numpy as np
    from .cascade import (BatchSimulator, masses_from_point_log,
                          model_digest, write_masses_binary)
    model = cfg.build_model()
    grid = cfg.build_grid()
    seed = cfg.seed()
    replicas = cfg.replicas()
    outdir = _outdir(cfg)
    fmt = cfg.output_formats()
    sim = BatchSimulator(model, grid, kind=cfg.sampler_kind(),
                         cutoff=cfg.small_jump_cutoff(),
                         substitute=cfg.get_bool("model", "substitute_small"))
    digest = model_digest(model)
    rows = []
    tick = _progress(replicas)
    for start, pl in sim.chunks(seed, replicas,
                                cfg.get_int("experiment", "chunk", 256)):
        cells, totals = masses_from_point_log(grid, pl)
        for j, z in enumerate(totals):
            replica = start + j
            rows.append((replica, float(z)))
            write_masses_binary(
                os.path.join(outdir, f"realization_{replica:06d}.bin"),
                grid, digest, cells[j])
        tick(start + len(totals))
    _progress_done(replicas)
    if fmt in ("csv", "both"):
        _write_csv(cfg, "summary.csv", ("replica", "total_mass"), rows)
    if fmt in ("json", "both"):
        payload = dict(_stamp(cfg))
        payload["replicas"] = replicas
        payload["mean_total_mass"] = float(np.mean([z for _, z in rows]))
        _write_json(cfg, "summary.json", payload)
    print(os.path.join(outdir, "summary.csv" if fmt != "json"
                       else "summary.json"))
    return 0


# -- verify checks ----------------------------------------------------------


def _check_normalization(cfg, model, grid, seed):
    from .levy import levy_exponent
    v0 = levy_exponent(model, 0.0)
    v1 = levy_exponent(model, 1.0)
    metric = max(abs(v0), abs(v1))
    tol = cfg.get_float("experiment", "normalization_tol", 1e-12)
    return metric <= tol, {"metric": metric, "tolerance": tol}


def _check_areas(cfg, model, grid, seed):
    import numpy as np
    from . import cones
    from ._rng import make_generator
    tol = cfg.get_float("experiment", "areas_tol", 1e-8)
    count = cfg.get_int("experiment", "areas_count", 60)
    rng = make_generator(seed, 0, "verify-areas")
    worst = 0.0
    for _ in range(count):
        L = float(rng.uniform(0.5, 3.0))
        lo = float(rng.uniform(-2.0, 2.0))
        I = (lo, lo + L)
        eps = L * 2.0 ** (-int(rng.integers(2, 9)))
        t = float(rng.uniform(lo, lo + L))
        closed = cones.area_local_cone(I, eps)
        oracle = cones.region_area(cones.local_cone(I, t, eps))
        worst = max(worst, abs(closed - oracle))
        s = float(rng.uniform(lo, lo + L))
        closed = cones.area_pair(I, s, t, eps)
        region = (cones.PointCone(s, eps) & cones.PointCone(t, eps)) \
            - cones.IntervalCone(*I)
        worst = max(worst, abs(closed - cones.region_area(region)))
    return worst <= tol, {"metric": worst, "tolerance": tol,
                          "regions": 2 * count}


def _check_star(cfg, model, grid, seed):
    import numpy as np
    from .cascade import build_realization, decompose_star
    tol = cfg.get_float("experiment", "star_tol", 1e-10)
    worst = 0.0
    small = type(grid)(grid.interval, min(grid.levels, 6), grid.oversample)
    for replica in range(4):
        r = build_realization(model, small, seed=seed, replica=replica,
                              stream_tag="verify-star")
        for level in (1, 2):
            recon = decompose_star(r, level).reconstruct_total()
            worst = max(worst, abs(recon - r.total_mass) /
                        max(r.total_mass, 1e-300))
    return worst <= tol, {"metric": worst, "tolerance": tol}


def _check_scaling_ks(cfg, model, grid, seed):
    from .cascade import scaled_mass_samples, simulate_prefix_masses
    from .moments import ks_two_sample
    p_min = cfg.get_float("experiment", "ks_p_min", 0.01)
    replicas = max(cfg.replicas(), 5000)
    lam = 0.5
    small = type(grid)(grid.interval, min(grid.levels, 8),
                       grid.oversample, 0)
    a = simulate_prefix_masses(model, small, seed, replicas, [lam],
                               stream_tag="verify-ks-a")[:, 0]
    b = scaled_mass_samples(model, small, lam, seed + 1, replicas,
                            stream_tag="verify-ks-b")
    stat, p = ks_two_sample(a, b)
    return p >= p_min, {"metric": p, "tolerance": p_min, "statistic": stat,
                        "replicas": replicas}


_CHECKS = {
    "normalization": _check_normalization,
    "areas": _check_areas,
    "star": _check_star,
    "scaling_ks": _check_scaling_ks,
}

_DEFAULT_CHECKS = ("normalization", "areas", "star", "scaling_ks")


def cmd_verify(cfg):
    from .config import ConfigError
    raw = cfg.get("experiment", "checks", "default").strip()
    if raw == "default":
        names = list(_DEFAULT_CHECKS)
    elif raw in ("none", ""):
        names = []
    else:
        names = [tok.strip() for tok in raw.split(",") if tok.strip()]
    for name in names:
        if name not in _CHECKS:
            raise ConfigError("experiment.checks", f"unknown check {name!r}")
    model = cfg.build_model() if names else None
    grid = cfg.build_grid() if names else None
    seed = cfg.seed()
    results = []
    for name in names:
        passed, detail = _CHECKS[name](cfg, model, grid, seed)
        results.append({"check": name, "passed": bool(passed), **detail})
        status = "pass" if passed else "FAIL"
        print(f"{name}: {status}")
    payload = dict(_stamp(cfg))
    payload["checks"] = results
    payload["all_passed"] = all(r["passed"] for r in results)
    fmt = cfg.output_formats()
    if fmt in ("json", "both"):
        _write_json(cfg, "verify.json", payload)
    if fmt in ("csv", "both"):
        _write_csv(cfg, "verify.csv",
                   ("check", "passed", "metric", "tolerance"),
                   [(r["check"], int(r["passed"]), r.get("metric", ""),
                     r.get("tolerance", "")) for r in results])
    return 0 if payload["all_passed"] else 1


# -- estimate ---------------------------------------------------------------


def cmd_estimate(cfg):
    from .config import ConfigError
    kind = cfg.get("experiment", "kind", "moments").strip().lower()
    runner = {
        "moments": _estimate_moments,
        "tail": _estimate_tail,
        "scaling": _estimate_scaling,
        "covariance": _estimate_covariance,
    }.get(kind)
    if runner is None:
        raise ConfigError("experiment.kind", f"unknown experiment {kind!r}")
    return runner(cfg)


def _simulate_totals(cfg, model, grid):
    from .cascade import simulate_total_masses
    replicas = cfg.replicas()
    tick = _progress(replicas)
    z = simulate_total_masses(
        model, grid, cfg.seed(), replicas, kind=cfg.sampler_kind(),
        cutoff=cfg.small_jump_cutoff(),
        substitute=cfg.get_bool("model", "substitute_small"),
        chunk=cfg.get_int("experiment", "chunk", 256), progress=tick)
    _progress_done(replicas)
    return z


def _estimate_moments(cfg):
    from .levy import diagnose
    from .moments import estimate_moment
    model = cfg.build_model()
    grid = cfg.build_grid()
    qs = cfg.get_float_list("experiment", "q_values", (1.0, 2.0))
    z = _simulate_totals(cfg, model, grid)
    zeta = diagnose(model).tail_index
    rows = []
    for q in qs:
        e = estimate_moment(z, q, tail_index=zeta)
        rows.append((q, e.mean, e.stderr,
                     e.median_of_means if e.median_of_means is not None
                     else math.nan,
                     "" if e.heavy_tail is None else int(e.heavy_tail)))
    payload = dict(_stamp(cfg))
    payload["estimates"] = [
        {"q": r[0], "mean": r[1], "stderr": r[2], "median_of_means": r[3],
         "heavy_tail": r[4]} for r in rows]
    fmt = cfg.output_formats()
    if fmt in ("json", "both"):
        _write_json(cfg, "moments.json", payload)
    if fmt in ("csv", "both"):
        _write_csv(cfg, "moments.csv",
                   ("q", "mean", "stderr", "median_of_means", "heavy_tail"),
                   rows)
    return 0


def _estimate_tail(cfg):
    from .levy import diagnose
    from .moments import hill_tail_report
    model = cfg.build_model()
    grid = cfg.build_grid()
    z = _simulate_totals(cfg, model, grid)
    zeta = diagnose(model).tail_index
    rep = hill_tail_report(z, tail_index_for_constant=zeta)
    payload = dict(_stamp(cfg))
    payload.update({
        "hill": {str(f): v for f, v in rep.hill.items()},
        "hill_selected": rep.hill_selected,
        "hill_stderr": rep.hill_stderr,
        "tail_constant": rep.tail_constant,
        "theory_tail_index": zeta,
    })
    fmt = cfg.output_formats()
    if fmt in ("json", "both"):
        _write_json(cfg, "tail.json", payload)
    if fmt in ("csv", "both"):
        _write_csv(cfg, "tail.csv", ("fraction", "hill_estimate"),
                   sorted(rep.hill.items()))
    return 0


def _estimate_scaling(cfg):
    from .cascade import simulate_prefix_masses
    from .moments import scaling_fit
    model = cfg.build_model()
    grid = cfg.build_grid()
    lams = cfg.get_float_list("experiment", "scale_ratios",
                              (0.5, 0.25, 0.125, 0.0625))
    qs = cfg.get_float_list("experiment", "q_values", (0.5, 1.0, 1.5, 2.0))
    replicas = cfg.replicas()
    tick = _progress(replicas)
    m = simulate_prefix_masses(model, grid, cfg.seed(), replicas, lams,
                               kind=cfg.sampler_kind(),
                               chunk=cfg.get_int("experiment", "chunk", 256),
                               progress=tick)
    _progress_done(replicas)
    rep = scaling_fit(model, lams, m, qs)
    payload = dict(_stamp(cfg))
    payload.update({
        "q_values": list(rep.q_values),
        "fitted_slopes": list(rep.slopes),
        "theory_exponents": list(rep.theory),
        "max_abs_error": rep.max_abs_error,
    })
    fmt = cfg.output_formats()
    if fmt in ("json", "both"):
        _write_json(cfg, "scaling.json", payload)
    if fmt in ("csv", "both"):
        _write_csv(cfg, "scaling.csv", ("q", "fitted_slope", "theory"),
                   list(zip(rep.q_values, rep.slopes, rep.theory)))
    return 0


def _estimate_covariance(cfg):
    from .cascade import juxtaposed_total_masses
    from .moments import covariance_report
    model = cfg.build_model()
    grid = cfg.build_grid()
    n_intervals = cfg.get_int("experiment", "n_intervals", 4)
    replicas = cfg.replicas()
    tick = _progress(replicas)
    masses = juxtaposed_total_masses(model, grid, n_intervals, cfg.seed(),
                                     replicas, kind=cfg.sampler_kind(),
                                     progress=tick)
    _progress_done(replicas)
    rep = covariance_report(model, masses)
    payload = dict(_stamp(cfg))
    payload["rows"] = [
        {"gap": g, "covariance": e, "stderr": s, "theory_claimed": tc,
         "theory_exact_quadrature": tq} for g, e, s, tc, tq in rep.rows()]
    fmt = cfg.output_formats()
    if fmt in ("json", "both"):
        _write_json(cfg, "covariance.json", payload)
    if fmt in ("csv", "both"):
        _write_csv(cfg, "covariance.csv",
                   ("gap", "covariance", "stderr", "theory_claimed",
                    "theory_exact_quadrature"), rep.rows())
    return 0


if __name__ == "__main__":
    sys.exit(main())
