"""Command line front end.

Every subcommand reads a TOML config, runs one task against the [model]
section, writes JSON (plus CSV where the result is a table) into the
output directory, and exits 0 when every verdict passed or the task
simply completed, 1 when some verdict failed, 2 on usage or
configuration errors. An empirical finding, like most paths exploding,
is a result and not an error.

The config declares the model once (dim, p, A as a list of rows of
expression strings, G as a list of expression strings, optional sigma
and rho) and adds one section per task. Region specs are inline tables
such as {kind = "ball", center = [0.0, 0.0], radius = 5.0} or
{kind = "box", lower = [-4.0, -4.0], upper = [4.0, 4.0]}.

Seeds resolve in a fixed order: --seed beats the task section's seed,
which beats the SDE_LAB_SEED environment variable; when none is given
a fresh seed is drawn and printed so the run can be reproduced. For a
fixed seed the artifacts are deterministic up to their "generated"
timestamp, whatever the thread count.
"""

import argparse
import csv
import datetime
import json
import os
import secrets
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import density as dn
from . import expr as ex
from . import lyapunov as ly
from . import model as md
from . import recurrence as rc
from . import simulate as sm
from . import verify as vf

CRITERIA = ("c2", "c2bis", "drift", "dual", "generalV")
CHECKS = ("martingale", "qv", "driftfunc", "invariance", "strongconsistency")


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"could not parse {path}: {exc}") from exc


def _model_from(cfg):
    if "model" not in cfg:
        raise ValueError("config has no [model] section")
    model = md.build_model(cfg["model"])
    for w in model.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return model


def _section(cfg, name):
    sec = cfg.get(name)
    if sec is None:
        raise ValueError(f"config has no [{name}] section")
    return dict(sec)


def _require(section, key, where):
    if key not in section:
        raise ValueError(f"[{where}] needs a {key!r} entry")
    return section[key]


def _region_from(spec, dim, where="region"):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"[{where}] must give kind = ball, box, or annulus")
    kind = spec["kind"]
    if kind == "ball":
        center = spec.get("center", [0.0] * dim)
        return md.Region.ball(center, float(_require(spec, "radius", where)))
    if kind == "box":
        return md.Region.box(_require(spec, "lower", where),
                             _require(spec, "upper", where))
    if kind == "annulus":
        center = spec.get("center", [0.0] * dim)
        return md.Region.annulus(float(_require(spec, "inner", where)),
                                 float(_require(spec, "outer", where)), center)
    raise ValueError(f"unknown region kind {kind!r}")


def _resolve_seed(args, section):
    """--seed, then the task section's seed, then SDE_LAB_SEED, then a
    fresh draw. The seed is always printed so the run can be repeated."""
    if getattr(args, "seed", None) is not None:
        seed, source = int(args.seed), "--seed"
    elif "seed" in section:
        seed, source = int(section["seed"]), "config"
    elif os.environ.get("SDE_LAB_SEED"):
        seed, source = int(os.environ["SDE_LAB_SEED"]), "SDE_LAB_SEED"
    else:
        seed, source = secrets.randbits(32), "random"
    print(f"seed: {seed} ({source})")
    return seed


def _np_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def _write_artifact(obj, out_dir, name):
    out = dict(obj)
    out["generated"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, default=_np_default)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# subcommand handlers; each returns the process exit code


def cmd_check_ellipticity(args, cfg, model, out_dir):
    sec = _section(cfg, "ellipticity")
    region = _region_from(_require(sec, "region", "ellipticity"), model.dim)
    report = md.check_ellipticity(
        model, region, points_per_axis=int(sec.get("points_per_axis", 21)))
    _write_artifact(report.to_dict(), out_dir, "ellipticity.json")
    word = "pass" if report.passed else "fail"
    print(f"ellipticity: {word} (min eigenvalue {report.m_B!r} "
          f"on {report.n_points} points)")
    return 0 if report.passed else 1


def cmd_check_integrability(args, cfg, model, out_dir):
    sec = _section(cfg, "integrability")
    region = _region_from(_require(sec, "region", "integrability"), model.dim)
    report = md.check_integrability(
        model, region,
        which=sec.get("which", "drift"),
        p_test=sec.get("p_test"),
        levels=int(sec.get("levels", 8)),
        n_ang=int(sec.get("n_ang", 16)))
    _write_artifact(report.to_dict(), out_dir, "integrability.json")
    print(f"integrability of {report.which} at p = {report.p_test!r}: "
          f"{report.verdict}")
    return 1 if report.verdict == "diverging" else 0


def cmd_check_lyapunov(args, cfg, model, out_dir):
    sec = dict(cfg.get("lyapunov", {}))
    criterion = args.criterion or sec.get("criterion", "c2")
    spec = dict(sec.get("region", {"kind": "ball", "radius": 10.0}))
    if args.radius_max is not None:
        if spec.get("kind", "ball") != "ball":
            raise ValueError("--radius-max only applies to ball regions")
        spec["kind"] = "ball"
        spec["radius"] = args.radius_max
    region = _region_from(spec, model.dim, "lyapunov")
    ppa = int(sec.get("points_per_axis", 41))
    M = float(sec["M"]) if "M" in sec else None

    if criterion == "c2":
        report = ly.check_c2(model, region, M=M, points_per_axis=ppa)
    elif criterion == "c2bis":
        N0 = float(_require(sec, "N0", "lyapunov"))
        report = ly.check_c2bis(model, region, N0, M=M, points_per_axis=ppa)
    elif criterion == "drift":
        report = ly.check_drift_only(
            model, region, variant=sec.get("variant", "C2"),
            N0=float(sec.get("N0", 0.0)), M=M, points_per_axis=ppa)
    elif criterion == "dual":
        beta = [ex.parse(str(s), model.dim)
                for s in _require(sec, "beta", "lyapunov")]
        report = ly.check_dual(model, beta, region, M=M, points_per_axis=ppa)
    elif criterion == "generalV":
        V = ex.parse(str(_require(sec, "V", "lyapunov")), model.dim)
        report = ly.check_general_V(model, V, region, M=M,
                                    points_per_axis=ppa)
    else:
        raise ValueError(f"unknown criterion {criterion!r} "
                         f"(choose from {', '.join(CRITERIA)})")

    d = report.to_dict()
    _write_artifact(d, out_dir, "lyapunov.json")
    failed = d.get("satisfied_for_M") is False
    sat = d.get("saturation")
    if sat is not None and not sat.get("saturating", True):
        failed = True
    word = "fail" if failed else "pass"
    print(f"lyapunov ({report.criterion}): minimal_M = {d['minimal_M']!r}, "
          f"{word}")
    return 1 if failed else 0


def _solve_from_config(cfg, model):
    sec = _section(cfg, "density")
    lower = _require(sec, "lower", "density")
    upper = _require(sec, "upper", "density")
    resolution = int(sec.get("resolution", 81))
    gd = dn.solve_stationary(
        model, (lower, upper), resolution,
        tol=float(sec.get("tol", 1e-8)),
        cross_mode=sec.get("cross_mode", "centered"))
    return sec, gd


def cmd_solve_density(args, cfg, model, out_dir):
    sec, gd = _solve_from_config(cfg, model)
    dn.save_density(gd, os.path.join(out_dir, "density.json"),
                    os.path.join(out_dir, "density.csv"))
    report = {
        "box": {"lower": list(gd.lower), "upper": list(gd.upper)},
        "shape": list(gd.shape),
        "flux_residual": gd.residual,
        "mass_on_grid": gd.mass(),
        "peak": gd.peak(),
        "normalization": gd.normalization,
        "notes": gd.notes,
    }
    if sec.get("reference"):
        ref = ex.parse(str(sec["reference"]), model.dim)
        report["max_relative_error_vs_reference"] = dn.max_relative_error(gd, ref)
    _write_artifact(report, out_dir, "density_report.json")
    print(f"density: solved on {list(gd.shape)} nodes, "
          f"flux residual {gd.residual!r}")
    return 0


def cmd_check_divfree(args, cfg, model, out_dir):
    _, gd = _solve_from_config(cfg, model)
    dsec = dict(cfg.get("divfree", {}))
    tol = float(dsec.get("tolerance", 1e-3))
    decomp = dn.decompose(model, gd)
    residuals = dn.divfree_residual(model, decomp, gd)
    worst = max((r["normalized"] for r in residuals), default=0.0)
    report = {
        "residuals": residuals,
        "worst_normalized": worst,
        "tolerance": tol,
        "decomposition": decomp.stats,
    }
    _write_artifact(report, out_dir, "divfree.json")
    word = "pass" if worst <= tol else "fail"
    print(f"divfree: worst normalized residual {worst!r} "
          f"(tolerance {tol!r}), {word}")
    return 0 if worst <= tol else 1


def cmd_recurrence(args, cfg, model, out_dir):
    sec = _section(cfg, "recurrence")
    if sec.get("rho"):
        rho = ex.parse(str(sec["rho"]), model.dim)
    elif model.rho is not None:
        rho = model.rho
    else:
        raise ValueError("recurrence needs a density: set rho in "
                         "[recurrence] or [model]")
    if args.radius_max is not None:
        radii = np.geomspace(1.0, float(args.radius_max), 9)
    elif "radii" in sec:
        radii = [float(r) for r in sec["radii"]]
    else:
        radii = np.geomspace(1.0, 100.0, 9)
    B = None
    if sec.get("B"):
        B = [ex.parse(str(s), model.dim) for s in sec["B"]]
    table = rc.volume_growth(model, rho, B, radii,
                             n_ang=int(sec.get("n_ang", 64)))
    verdict = rc.recurrence_criterion(table)
    table.to_csv(os.path.join(out_dir, "recurrence.csv"))
    _write_artifact(table.verdict_dict(), out_dir, "recurrence.json")
    print(f"recurrence: {verdict} "
          f"(a({float(table.radii[-1]):g}) = {float(table.a[-1])!r})")
    return 1 if verdict == "not_satisfied" else 0


def _write_paths_csv(batch, path):
    d = batch.x_final.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "zeta_hat", "faulted", "int_g", "int_g2"]
                        + [f"x{i+1}_final" for i in range(d)])
        for j in range(len(batch.path_indices)):
            writer.writerow(
                [int(batch.path_indices[j]),
                 repr(float(batch.zeta_hat[j])),
                 int(batch.faulted[j]),
                 repr(float(batch.int_g[j])),
                 repr(float(batch.int_g2[j]))]
                + [repr(float(v)) for v in batch.x_final[j]])


def cmd_simulate(args, cfg, model, out_dir):
    sec = _section(cfg, "simulate")
    seed = _resolve_seed(args, sec)
    n_paths = int(args.paths if args.paths is not None else sec.get("paths", 1000))
    h = float(args.step if args.step is not None else sec.get("step", 1e-3))
    T = float(args.horizon if args.horizon is not None else sec.get("horizon", 1.0))
    x0 = sec.get("x0", [0.0] * model.dim)
    ladder = sm.default_ladder(float(sec.get("r_max", sm.DEFAULT_R_MAX)))
    exit_radius = sec.get("exit_radius")
    if exit_radius is not None:
        exit_radius = float(exit_radius)
        ladder = sorted(set(ladder) | {exit_radius})
    simcfg = sm.SimConfig(x0, h, T, n_paths, seed, ladder=ladder,
                          taming=bool(sec.get("taming", False)))

    summary = sm.explosion_prob(model, simcfg, T, threads=args.threads)
    report = {"seed": seed, "paths": n_paths, "step": h, "horizon": T,
              "x0": list(np.atleast_1d(np.asarray(x0, dtype=float))),
              "explosion": summary}
    if exit_radius is not None:
        report["first_exit"] = sm.first_exit_stats(
            model, simcfg, exit_radius, threads=args.threads)
    batch = sm.run_batch(model, simcfg, threads=args.threads)
    _write_paths_csv(batch, os.path.join(out_dir, "simulate.csv"))
    _write_artifact(report, out_dir, "simulate.json")
    print(f"simulate: explosion fraction {summary['estimate']!r} by t = {T:g} "
          f"(95% CI [{summary['ci_low']!r}, {summary['ci_high']!r}])")
    return 0


def _verify_u(sec, dim, lower, upper):
    if sec.get("u"):
        return ex.parse(str(sec["u"]), dim)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    return dn.bump(0.5 * (lower + upper), 0.45 * (upper - lower), dim)


def _verify_rho(sec, model):
    if sec.get("rho"):
        rho = ex.parse(str(sec["rho"]), model.dim)
    elif model.rho is not None:
        rho = model.rho
    else:
        raise ValueError("invariance needs a density: set rho in "
                         "[verify] or [model]")
    box = sec.get("rho_box")
    if box is None:
        raise ValueError("invariance needs rho_box = "
                         "{lower = [...], upper = [...]} in [verify]")
    return dn.grid_from_expression(
        rho, _require(box, "lower", "verify.rho_box"),
        _require(box, "upper", "verify.rho_box"),
        int(sec.get("rho_resolution", 121)))


def cmd_verify(args, cfg, model, out_dir):
    sec = dict(cfg.get("verify", {}))
    if args.check:
        checks = [args.check]
    else:
        checks = list(sec.get("checks", []))
        if not checks:
            raise ValueError("no verify checks requested: pass --check or "
                             "set checks = [...] in [verify]")
    seed = _resolve_seed(args, sec)
    x0 = sec.get("x0", [0.0] * model.dim)
    t = float(args.horizon if args.horizon is not None else sec.get("horizon", 1.0))
    n_paths = int(args.paths if args.paths is not None else sec.get("paths", 2000))
    h = float(args.step if args.step is not None else sec.get("step", 0.01))
    lower = sec.get("support_lower", [-2.0] * model.dim)
    upper = sec.get("support_upper", [2.0] * model.dim)

    summaries = []
    for check in checks:
        if check == "martingale":
            u = _verify_u(sec, model.dim, lower, upper)
            s = vf.martingale_residual(
                model, u, x0, t, n_paths, h=h, seed=seed,
                support_lower=lower, support_upper=upper,
                threads=args.threads)
        elif check == "qv":
            u = _verify_u(sec, model.dim, lower, upper)
            s = vf.qv_residual(
                model, u, x0, t, n_paths, h=h, seed=seed,
                support_lower=lower, support_upper=upper,
                threads=args.threads)
        elif check == "driftfunc":
            s = vf.drift_functional_check(
                model, x0, t, int(sec.get("r_exp", 1)), n_paths, h=h,
                seed=seed, threads=args.threads)
        elif check == "invariance":
            s = vf.invariance_test(
                model, _verify_rho(sec, model), t, n_paths, h=h, seed=seed,
                threads=args.threads, n_perm=int(sec.get("n_perm", 199)),
                subsample=int(sec.get("subsample", 2000)))
        elif check == "strongconsistency":
            s = vf.strong_consistency(model, x0, h, t, n_paths, seed=seed,
                                      threads=args.threads)
        else:
            raise ValueError(f"unknown verify check {check!r} "
                             f"(choose from {', '.join(CHECKS)})")
        summaries.append(s)
        print(f"verify {check}: {s.verdict} "
              f"({s.statistic} = {s.estimate!r})")

    payload = {"seed": seed, "checks": [s.to_dict() for s in summaries]}
    _write_artifact(payload, out_dir, "verify.json")
    return 1 if any(s.verdict == "fail" for s in summaries) else 0


def cmd_report(args, cfg, model, out_dir):
    bundle = {}
    for name in sorted(os.listdir(out_dir)):
        if not name.endswith(".json") or name == "report.json":
            continue
        with open(os.path.join(out_dir, name)) as fh:
            bundle[name] = json.load(fh)
    if not bundle:
        raise ValueError(f"no JSON artifacts in {out_dir}; run some tasks first")
    _write_artifact({"config": cfg, "artifacts": bundle}, out_dir,
                    "report.json")
    print(f"report: bundled {len(bundle)} artifacts into report.json")
    return 0


_HANDLERS = {
    "check-ellipticity": cmd_check_ellipticity,
    "check-integrability": cmd_check_integrability,
    "check-lyapunov": cmd_check_lyapunov,
    "solve-density": cmd_solve_density,
    "check-divfree": cmd_check_divfree,
    "recurrence": cmd_recurrence,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    top = argparse.ArgumentParser(
        prog="sdelab",
        description="Checks, stationary density solves, and Monte Carlo "
                    "experiments for diffusion models given by expression "
                    "coefficients.")
    sub = top.add_subparsers(dest="command", required=True,
                             metavar="SUBCOMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", nargs="?", default=None,
                        help="TOML config file")
    common.add_argument("--config", dest="config_opt", metavar="PATH",
                        default=None,
                        help="TOML config file (same as the positional)")
    common.add_argument("--out", default=".", metavar="DIR",
                        help="directory for artifacts (default: current)")
    common.add_argument("--seed", type=int, default=None, metavar="N",
                        help="RNG seed; beats the config seed and SDE_LAB_SEED")
    common.add_argument("--threads", type=int,
                        default=os.cpu_count() or 1, metavar="N",
                        help="worker threads for path simulation "
                             "(default: all cores; results do not depend "
                             "on the thread count)")

    mc = argparse.ArgumentParser(add_help=False)
    mc.add_argument("--paths", type=int, default=None, metavar="N",
                    help="number of Monte Carlo paths")
    mc.add_argument("--step", type=float, default=None, metavar="H",
                    help="time step")
    mc.add_argument("--horizon", type=float, default=None, metavar="T",
                    help="time horizon")

    sub.add_parser("check-ellipticity", parents=[common],
                   help="sample eigenvalue bounds of A over a region")
    sub.add_parser("check-integrability", parents=[common],
                   help="estimate local integrability of the drift or of "
                        "the derivatives of A")
    p = sub.add_parser("check-lyapunov", parents=[common],
                       help="growth criteria ruling out explosion")
    p.add_argument("--criterion", choices=CRITERIA, default=None,
                   help="which criterion (default: the config, then c2)")
    p.add_argument("--radius-max", type=float, default=None, metavar="R",
                   help="radius of the sample ball (overrides the config "
                        "region)")
    sub.add_parser("solve-density", parents=[common],
                   help="solve the stationary flux equation on a box")
    sub.add_parser("check-divfree", parents=[common],
                   help="decompose the drift against the solved density "
                        "and test that the remainder is divergence free")
    p = sub.add_parser("recurrence", parents=[common],
                       help="volume growth table and recurrence verdict")
    p.add_argument("--radius-max", type=float, default=None, metavar="R",
                   help="largest radius (overrides the config radii list)")
    sub.add_parser("simulate", parents=[common, mc],
                   help="Monte Carlo explosion study")
    p = sub.add_parser("verify", parents=[common, mc],
                       help="statistical checks of simulated paths")
    p.add_argument("--check", choices=CHECKS, default=None,
                   help="run one check (default: the checks list in "
                        "[verify])")
    sub.add_parser("report", parents=[common],
                   help="bundle the JSON artifacts in --out into "
                        "report.json")
    return top


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    path = args.config if args.config is not None else args.config_opt
    if path is None:
        parser.error("a config file is required (positional or --config)")
    try:
        cfg = _load_config(path)
        model = _model_from(cfg)
        os.makedirs(args.out, exist_ok=True)
        return _HANDLERS[args.command](args, cfg, model, args.out)
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
