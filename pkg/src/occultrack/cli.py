"""``occultrack`` command line: generate, detect, campaign, triangulate.

Exit status is 0 on success, 1 on usage errors and 2 on data or validation
errors. Failures print one ``occultrack: error: <kind>: <reason>`` line to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import campaign as cmp
from .detect import RansacParams, process_sequence
from .errors import OccultrackError
from .sensor import read_sequence, write_sequence
from .starfield import Photometry, dump_catalog
from .triangulate import ViewingPlane, triangulate

log = logging.getLogger("occultrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _field_options(p):
    d = cmp.TrialConfig()
    ph = d.photometry
    g = p.add_argument_group("star field and sensor")
    g.add_argument("--width", type=int, default=d.width)
    g.add_argument("--height", type=int, default=d.height)
    g.add_argument("--stars", type=int, default=d.star_count, help="catalog size before duplicate merging")
    g.add_argument("--mag-min", type=float, default=d.mag_min)
    g.add_argument("--mag-max", type=float, default=d.mag_max)
    g.add_argument("--photometry", choices=("flux", "stretch"), default=ph.kind)
    g.add_argument("--i-ref", type=float, default=ph.i_ref, help="DN of a --mag-min star")
    g.add_argument("--i-faint", type=float, default=ph.i_faint, help="DN of a --mag-max star (stretch only)")
    g.add_argument("--sigma", type=float, default=d.sigma, help="readout noise, DN")
    g.add_argument("--frames", type=int, default=d.total_frames)
    g.add_argument("--radius", type=float, default=d.occluder_radius, help="occluder radius, pixels")


def _detect_options(p):
    d = cmp.TrialConfig()
    r = d.ransac
    g = p.add_argument_group("detection")
    g.add_argument("--k", type=int, default=d.k, help="reference/operating frame offset")
    g.add_argument("--j", type=int, default=d.j, help="anomaly buffer length, frames")
    g.add_argument("--ransac-iters", type=int, default=r.max_iterations)
    g.add_argument("--inlier-tol", type=float, default=r.inlier_tolerance)
    g.add_argument("--loss-threshold", type=float, default=r.loss_threshold)
    g.add_argument("--min-inliers", type=int, default=r.min_inliers)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="occultrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a PGM frame sequence plus ground truth")
    _field_options(g)
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--trial", type=int, default=0, help="trial index whose trajectory and noise to use")
    g.add_argument("--out", required=True, help="output directory")

    d = sub.add_parser("detect", help="run detection over a PGM frame sequence")
    d.add_argument("input", help="directory of frame_NNNNN.pgm files")
    _detect_options(d)
    d.add_argument("--seed", type=int, default=0, help="RANSAC sampling seed")
    d.add_argument("--out", default="-", help="result JSON path, '-' for stdout")
    d.add_argument("--dump-anomalies", metavar="CSV", help="write the anomaly buffer as CSV")

    c = sub.add_parser("campaign", help="Monte Carlo detection campaign")
    _field_options(c)
    _detect_options(c)
    c.add_argument("--seed", type=int, default=0, help="master seed")
    c.add_argument("--trials", type=int, default=25)
    c.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    c.add_argument("--calibrate", type=float, metavar="COVERAGE",
                   help="choose --stars so mean occlusion coverage hits this fraction")
    c.add_argument("--out", default="-", help="output directory, '-' prints the report JSON")
    c.add_argument("--dump-frames", action="store_true", help="write per-trial PGM frames under --out")
    c.add_argument("--dump-anomalies", action="store_true", help="write per-trial anomaly CSVs under --out")

    t = sub.add_parser("triangulate", help="radiant and track points from two viewing planes")
    t.add_argument("input", help="JSON with planes A and B and optional sightlines from A")
    t.add_argument("--out", default="-")
    return p


def config_from_args(a) -> cmp.TrialConfig:
    phot = Photometry(kind=a.photometry, m_ref=a.mag_min, i_ref=a.i_ref,
                      m_faint=a.mag_max, i_faint=a.i_faint)
    ransac = RansacParams(a.ransac_iters, a.inlier_tol, a.min_inliers, a.loss_threshold)
    return cmp.TrialConfig(
        width=a.width, height=a.height, star_count=a.stars, mag_min=a.mag_min, mag_max=a.mag_max,
        sigma=a.sigma, k=getattr(a, "k", 1), j=getattr(a, "j", 30), total_frames=a.frames,
        occluder_radius=a.radius, ransac=ransac, master_seed=a.seed, photometry=phot,
    )


def _emit(text: str, out: str):
    if out == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_generate(a):
    a.k, a.j, a.ransac_iters, a.inlier_tol, a.loss_threshold, a.min_inliers = 1, 30, 100, 3.0, 9.0, 5
    config = config_from_args(a)
    catalog, _ = cmp.campaign_field(config)
    traj = cmp.trial_trajectory(config, a.trial)
    frames = cmp.trial_frames(config, a.trial, traj)
    out = Path(a.out)
    write_sequence(frames, out)
    (out / "catalog.csv").write_text(dump_catalog(catalog))
    truth = {
        "trajectory": traj.to_dict(),
        "catalog": "catalog.csv",
        "stars": len(catalog),
        "trial": a.trial,
        "trial_seed": cmp.trial_seed(config, a.trial),
        "config": config.to_dict(),
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    log.info("wrote %d frames to %s", len(frames), out)


def cmd_detect(a):
    frames = read_sequence(a.input)
    if not frames:
        raise OccultrackError(f"no frame_*.pgm files in {a.input}")
    params = RansacParams(a.ransac_iters, a.inlier_tol, a.min_inliers, a.loss_threshold, a.seed)
    result = process_sequence(frames, a.k, a.j, params)
    _emit(result.to_json(), a.out)
    if a.dump_anomalies:
        Path(a.dump_anomalies).write_text(result.anomalies.to_csv())


def cmd_campaign(a):
    config = config_from_args(a)
    meta = {}
    if a.calibrate is not None:
        n = cmp.calibrate_density(a.calibrate, config)
        config = config.replace(star_count=n)
        meta["calibration"] = {"target_coverage": a.calibrate, "star_count": n}
    dump = None
    if a.dump_frames or a.dump_anomalies:
        if a.out == "-":
            raise UsageError("--dump-frames/--dump-anomalies need an --out directory")
        dump = cmp.DumpOptions(Path(a.out), a.dump_frames, a.dump_anomalies)
    report = cmp.run_campaign(config, a.trials, workers=a.workers, dump=dump)
    report.metadata.update(meta)
    if a.out == "-":
        _emit(report.to_json(), "-")
        return
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "records.csv").write_text(report.records_csv())
    log.info("detections %d/%d", report.detections, report.n_trials)


def cmd_triangulate(a):
    spec = json.loads(Path(a.input).read_text())
    if "planes" in spec:
        A, B = (ViewingPlane.from_dict(p) for p in spec["planes"])
    else:
        A, B = ViewingPlane.from_dict(spec["A"]), ViewingPlane.from_dict(spec["B"])
    _emit(json.dumps(triangulate(A, B, spec.get("sightlines", ()))), a.out)


COMMANDS = {
    "generate": cmd_generate,
    "detect": cmd_detect,
    "campaign": cmd_campaign,
    "triangulate": cmd_triangulate,
}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    reason = " ".join(str(exc).split()) or type(exc).__name__
    print(f"occultrack: error: {kind}: {reason}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        COMMANDS[a.command](a)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (OccultrackError, ValueError, KeyError, TypeError, OSError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
