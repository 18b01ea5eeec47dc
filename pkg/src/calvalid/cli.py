"""Command-line interface.

Subcommands::

    calvalid simulate --out DIR            synthetic correspondence sets + manifest
    calvalid fit CORR --out MODEL          least-squares camera model
    calvalid validate MODEL CORR           validation record as JSON
    calvalid report RECORD... --out DIR    summary.csv, histograms.csv, summary.svg
    calvalid run --out DIR                 simulate, fit, validate and report in one go

Exit codes: 0 when KS does not reject (or the command succeeded), 2 when
KS rejects, 1 on any error. Errors are printed to stderr as a JSON object
``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .errors import CalValidError, ConfigInvalid, ParseError
from .fit import LOSSES, FitConfig, flag_inliers, load_model, model_to_json, refine, save_model
from .formats import load_correspondences, save_correspondences
from .gof import GofTest
from .noise import DEFAULT_DELTA, IRLSConfig
from .pipeline import ValidationRecord, validate_correspondences, write_report
from .sim import RNG_ALGORITHM, SimConfig, gen_sets, resolve_sigma_3d

log = logging.getLogger("calvalid")

EXIT_ACCEPT = 0
EXIT_ERROR = 1
EXIT_REJECT = 2
SEED_ENV = "CALVALID_SEED"


# -- argument helpers ---------------------------------------------------------

def _floats(n):
    def parse(text):
        try:
            vals = [float(v) for v in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from None
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
        return tuple(vals)
    return parse


def _size(text):
    try:
        w, h = (int(v) for v in text.lower().replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected WIDTHxHEIGHT") from None
    return w, h


def _tests(text):
    try:
        return tuple(GofTest.parse(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def resolve_seed(seed):
    """The ``CALVALID_SEED`` environment variable takes precedence over ``--seed``."""
    env = os.environ.get(SEED_ENV)
    if env is None or not env.strip():
        return seed
    try:
        return int(env)
    except ValueError:
        raise ConfigInvalid(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ParseError(str(exc), reason="IOError", path=str(path)) from None


# -- simulate -------------------------------------------------------------------

def sim_config(args):
    kw = dict(n_sets=args.n_sets, sigma_d=args.sigma_d, sigma_3d=args.sigma_3d,
              lidar_px=args.lidar_px, grid=args.grid, f=args.focal, theta=args.theta,
              image_size=args.image_size, rot_range_deg=args.rot_range,
              seed=resolve_seed(args.seed))
    return SimConfig(**kw)


def simulate(cfg, out_dir):
    """Write one correspondence file and one truth model per set, plus ``manifest.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ParseError(str(exc), reason="IOError", path=str(out)) from None
    sets = gen_sets(cfg)
    files = []
    for s in sets:
        corr = out / f"set_{s.index:03d}.jsonl"
        truth = out / f"set_{s.index:03d}.truth.json"
        try:
            save_correspondences(corr, s.corrs, s.scales)
            save_model(s.truth, truth)
        except OSError as exc:
            raise ParseError(str(exc), reason="IOError", path=str(out)) from None
        files.append({"set_id": f"set_{s.index:03d}", "correspondences": corr.name,
                      "truth": truth.name, "coverage": s.coverage, "distance": s.distance,
                      "sha256": {corr.name: _sha256(corr), truth.name: _sha256(truth)}})
    manifest = {"schema": "calvalid.manifest/1", "version": __version__, "config": cfg.to_dict(),
                "sigma_3d_resolved": resolve_sigma_3d(cfg), "rng": RNG_ALGORITHM,
                "sets": files}
    _write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return out / "manifest.json"


def cmd_simulate(args):
    path = simulate(sim_config(args), args.out)
    log.info("wrote %s", path)
    return EXIT_ACCEPT


# -- fit ------------------------------------------------------------------------

def fit_config(args):
    return FitConfig(distortion_order=args.order, max_iter=args.max_iter, tol=args.tol,
                     inlier_threshold=args.inlier_threshold, image_size=args.image_size,
                     loss=args.loss, loss_scale=args.loss_scale)


def cmd_fit(args):
    corrs, scales = load_correspondences(args.correspondences)
    cfg = fit_config(args)
    init = load_model(args.init) if args.init else None
    model, res = refine(corrs, cfg, init)
    if args.flag_inliers:
        corrs = flag_inliers(model, corrs, threshold=cfg.inlier_threshold)
        model, res = refine(corrs, cfg, model)
        if args.inliers_out:
            save_correspondences(args.inliers_out, corrs, scales)
    log.info("fit converged after %d iterations, cost %.6g", res.iterations, res.cost)
    _emit(model_to_json(model), args.out)
    return EXIT_ACCEPT


# -- validate -------------------------------------------------------------------

def irls_config(args):
    return IRLSConfig(max_iter=args.irls_max_iter, tol=args.irls_tol)


def validate_files(model_path, corr_path, alpha=0.05, tests=None, delta=DEFAULT_DELTA,
                   irls=None, set_id=None):
    """Library equivalent of ``calvalid validate``."""
    model = load_model(model_path)
    corrs, scales = load_correspondences(corr_path)
    if set_id is None:
        set_id = Path(corr_path).name.split(".")[0]
    kw = {} if tests is None else {"tests": tests}
    return validate_correspondences(model, corrs, scales, set_id=set_id, alpha=alpha,
                                    delta=delta, irls=irls, **kw)


def exit_code(record):
    return EXIT_REJECT if record.rejected else EXIT_ACCEPT


def cmd_validate(args):
    if not 0.0 < args.alpha < 1.0:
        raise ConfigInvalid("alpha must lie in (0, 1)")
    record = validate_files(args.model, args.correspondences, alpha=args.alpha,
                            tests=args.tests, delta=args.delta, irls=irls_config(args),
                            set_id=args.set_id)
    for w in record.warnings:
        log.warning("%s: %s", record.set_id, w)
    _emit(record.to_json(), args.out)
    return exit_code(record)


# -- report ---------------------------------------------------------------------

def load_record(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(str(exc), reason="IOError", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, reason="InvalidJSON", path=str(path), line=exc.lineno) from None
    try:
        return ValidationRecord.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid validation record: {exc}", reason="InvalidField",
                         path=str(path)) from None


def cmd_report(args):
    records = [load_record(p) for p in args.records]
    paths = write_report(records, args.out)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_ACCEPT


# -- run ------------------------------------------------------------------------

def _run_one(job):
    """Fit and validate one simulated set; returns the record path."""
    corr, set_id, out, fit_cfg, alpha, tests, delta, irls = job
    corrs, scales = load_correspondences(corr)
    model, _ = refine(corrs, fit_cfg)
    model_path = out / f"{set_id}.D{fit_cfg.distortion_order}.model.json"
    save_model(model, model_path)
    record = validate_correspondences(model, corrs, scales, set_id=set_id, alpha=alpha,
                                      tests=tests, delta=delta, irls=irls)
    rec_path = out / f"{set_id}.D{fit_cfg.distortion_order}.record.json"
    rec_path.write_text(record.to_json(), encoding="utf-8")
    return rec_path


def run_pipeline(sim_cfg, out_dir, orders=(1, 3), fit_cfg=None, alpha=0.05,
                 tests=tuple(GofTest), delta=DEFAULT_DELTA, irls=None, jobs=1):
    """Simulate, then fit, validate and report every set once per distortion order.

    Output goes to ``out_dir/data``, ``out_dir/D<order>/`` (models, records
    and report). Parallel and serial runs write identical files.
    """
    out = Path(out_dir)
    data = out / "data"
    simulate(sim_cfg, data)
    fit_cfg = fit_cfg or FitConfig(loss="cauchy", image_size=sim_cfg.image_size)
    reports = {}
    for order in orders:
        d = out / f"D{order}"
        d.mkdir(parents=True, exist_ok=True)
        cfg = dataclasses.replace(fit_cfg, distortion_order=order)
        work = [(data / f"set_{i:03d}.jsonl", f"set_{i:03d}", d, cfg, alpha, tests, delta, irls)
                for i in range(sim_cfg.n_sets)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                paths = list(pool.map(_run_one, work))
        else:
            paths = [_run_one(w) for w in work]
        reports[order] = write_report([load_record(p) for p in paths], d / "report")
    return reports


def cmd_run(args):
    cfg = sim_config(args)
    fit_cfg = FitConfig(image_size=cfg.image_size, loss=args.loss, loss_scale=args.loss_scale)
    reports = run_pipeline(cfg, args.out, orders=args.orders, fit_cfg=fit_cfg, alpha=args.alpha,
                           tests=args.tests, jobs=args.jobs)
    for order, paths in reports.items():
        log.info("D(%d,0): %s", order, paths["csv"])
    return EXIT_ACCEPT


# -- parser ---------------------------------------------------------------------

def _add_sim_args(p):
    d = SimConfig()
    p.add_argument("--n-sets", type=int, default=d.n_sets)
    p.add_argument("--sigma-d", type=float, default=d.sigma_d, help="detector noise std [px]")
    p.add_argument("--sigma-3d", type=float, default=None,
                   help="lidar pan noise as arc length [world units]; default from --lidar-px")
    p.add_argument("--lidar-px", type=float, default=d.lidar_px,
                   help="horizontal lidar noise at the farthest set [px] (default %(default)s)")
    p.add_argument("--grid", type=int, default=d.grid)
    p.add_argument("--focal", type=float, default=d.f)
    p.add_argument("--theta", type=_floats(3), default=d.theta, metavar="T1,T2,T3")
    p.add_argument("--image-size", type=_size, default=d.image_size, metavar="WxH")
    p.add_argument("--rot-range", type=float, default=d.rot_range_deg, help="degrees")
    p.add_argument("--seed", type=int, default=0, help=f"overridden by ${SEED_ENV}")


def _add_test_args(p):
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tests", type=_tests, default=tuple(GofTest), metavar="ks,dap,sw")


def build_parser():
    parser = argparse.ArgumentParser(prog="calvalid", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic correspondence sets")
    _add_sim_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    f = FitConfig()
    p = sub.add_parser("fit", help="fit a camera model by Levenberg-Marquardt")
    p.add_argument("correspondences")
    p.add_argument("--order", type=int, choices=(1, 3), default=f.distortion_order)
    p.add_argument("--init", help="initial model file")
    p.add_argument("--image-size", type=_size, default=f.image_size, metavar="WxH")
    p.add_argument("--loss", choices=LOSSES, default=f.loss)
    p.add_argument("--loss-scale", type=float, default=f.loss_scale, help="px")
    p.add_argument("--max-iter", type=int, default=f.max_iter)
    p.add_argument("--tol", type=float, default=f.tol)
    p.add_argument("--flag-inliers", action="store_true",
                   help="re-flag inliers after the fit and refit on them")
    p.add_argument("--inlier-threshold", type=float, default=f.inlier_threshold)
    p.add_argument("--inliers-out", help="write the re-flagged correspondences here")
    p.add_argument("--out", help="model file (default stdout)")
    p.set_defaults(func=cmd_fit)

    irls = IRLSConfig()
    p = sub.add_parser("validate", help="test a model against correspondences")
    p.add_argument("model")
    p.add_argument("correspondences")
    _add_test_args(p)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA,
                   help="lidar perturbation angle [rad]")
    p.add_argument("--irls-max-iter", type=int, default=irls.max_iter)
    p.add_argument("--irls-tol", type=float, default=irls.tol)
    p.add_argument("--set-id")
    p.add_argument("--out", help="record file (default stdout)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="summarize validation records")
    p.add_argument("records", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="simulate, fit, validate and report")
    _add_sim_args(p)
    _add_test_args(p)
    p.add_argument("--orders", type=lambda s: tuple(int(v) for v in s.split(",")),
                   default=(1, 3), metavar="1,3")
    p.add_argument("--loss", choices=LOSSES, default="cauchy")
    p.add_argument("--loss-scale", type=float, default=f.loss_scale)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CalValidError as exc:
        sys.stderr.write(json.dumps({"error": exc.to_dict()}) + "\n")
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": {"code": type(exc).__name__,
                                               "message": str(exc)}}) + "\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
