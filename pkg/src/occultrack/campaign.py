"""Monte Carlo detection campaigns over random transits of one star field.

Seeding: the catalog is keyed by ``master_seed`` alone and shared by every
trial. Trial ``i`` derives ``trial_seed = derive_seed(master_seed, TRIAL, i)``
which keys its trajectory, its readout noise (per frame) and its RANSAC
sampler, so any trial can be replayed in isolation.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import seeding
from .detect import DetectionResult, LineModel, RansacParams, process_sequence
from .errors import CalibrationError, InvalidArgumentError
from .sensor import (
    FRAME_NAME,
    NoiseParams,
    TrajectorySpec,
    disc_pixels,
    generate_trajectory,
    object_positions,
    render_frame,
)
from .starfield import Frame, Photometry, StarCatalog, generate_catalog, render_base_frame, write_pgm

log = logging.getLogger(__name__)

# see the README section on calibration for how these were chosen
# (star count is the 30% coverage point of the default field)
DEFAULT_STAR_COUNT = 24934
DEFAULT_PHOTOMETRY = Photometry(kind="stretch", m_ref=-1.5, i_ref=40.0, m_faint=6.5, i_faint=8.0)
DEFAULT_RANSAC = RansacParams(min_inliers=6)

RECORD_COLUMNS = ("trial", "detected", "loss", "inliers", "traj_err", "coverage", "frame_time")


@dataclass(frozen=True)
class TrialConfig:
    width: int = 2000
    height: int = 1000
    star_count: int = DEFAULT_STAR_COUNT
    mag_min: float = -1.5
    mag_max: float = 6.5
    sigma: float = 0.5
    k: int = 1
    j: int = 30
    total_frames: int = 30
    occluder_radius: float = 3.0
    ransac: RansacParams = DEFAULT_RANSAC
    master_seed: int = 0
    photometry: Photometry = DEFAULT_PHOTOMETRY

    def __post_init__(self):
        if self.j <= self.k:
            raise InvalidArgumentError(f"j={self.j} must exceed k={self.k}")
        if self.total_frames < 2:
            raise InvalidArgumentError("total_frames must be >= 2")
        if self.sigma < 0:
            raise InvalidArgumentError("sigma must be >= 0")

    def replace(self, **changes) -> TrialConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class DumpOptions:
    """Per-trial artifacts written under ``directory/trial_NNNNN/``."""

    directory: Path
    frames: bool = False
    anomalies: bool = False


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    detected: bool
    loss: float
    inliers: int
    trajectory_error: float | None
    occlusion_coverage: float
    per_frame_time: float
    anomaly_count: int = 0

    def csv_row(self) -> list:
        return [
            self.trial_index,
            int(self.detected),
            "" if not math.isfinite(self.loss) else repr(self.loss),
            self.inliers,
            "" if self.trajectory_error is None else repr(self.trajectory_error),
            repr(self.occlusion_coverage),
            repr(self.per_frame_time),
        ]

    def same_outcome(self, other: TrialRecord) -> bool:
        """Equality ignoring wall-clock timing."""
        a = dataclasses.replace(self, per_frame_time=0.0)
        b = dataclasses.replace(other, per_frame_time=0.0)
        return a == b


@dataclass(frozen=True)
class CampaignReport:
    n_trials: int
    detections: int
    detection_rate: float
    mean_trajectory_error: float | None
    std_trajectory_error: float | None
    mean_coverage: float
    mean_frame_time: float
    records: tuple[TrialRecord, ...]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["records"] = [dataclasses.asdict(r) for r in self.records]
        for r in d["records"]:
            if not math.isfinite(r["loss"]):
                r["loss"] = None
        return d

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in self.records:
            w.writerow(r.csv_row())
        return buf.getvalue()


# -- metrics --------------------------------------------------------------


def trajectory_error(traj: TrajectorySpec, model: LineModel) -> float:
    """RMS perpendicular distance from the true per-frame positions to ``model``."""
    d = model.distances(object_positions(traj))
    return float(np.sqrt(np.mean(d * d)))


def coverage_from_base(traj: TrajectorySpec, base: Frame) -> float:
    pix = base.pixels
    hits = 0
    for x, y in object_positions(traj):
        rows, cols = disc_pixels((x, y), traj.occluder_radius, base.width, base.height)
        hits += bool(np.any(pix[rows, cols]))
    return hits / traj.total_frames


def occlusion_coverage(traj: TrajectorySpec, catalog: StarCatalog, photometry: Photometry | None = None) -> float:
    """Fraction of frames in which the occluder covers at least one rendered star pixel."""
    return coverage_from_base(traj, render_base_frame(catalog, photometry))


# -- trials ---------------------------------------------------------------


@lru_cache(maxsize=4)
def _field(seed, count, width, height, mag_min, mag_max, photometry) -> tuple[StarCatalog, Frame]:
    cat = generate_catalog(seed, count, width, height, mag_min, mag_max)
    return cat, render_base_frame(cat, photometry)


def campaign_field(config: TrialConfig) -> tuple[StarCatalog, Frame]:
    """The shared catalog and its noiseless rendering."""
    return _field(config.master_seed, config.star_count, config.width, config.height,
                  config.mag_min, config.mag_max, config.photometry)


def trial_seed(config: TrialConfig, trial_index: int) -> int:
    return seeding.derive_seed(config.master_seed, seeding.TRIAL, trial_index)


def trial_trajectory(config: TrialConfig, trial_index: int) -> TrajectorySpec:
    return generate_trajectory(trial_seed(config, trial_index), config.width, config.height,
                               config.occluder_radius, config.total_frames)


def trial_frames(config: TrialConfig, trial_index: int, traj: TrajectorySpec | None = None) -> list[Frame]:
    _, base = campaign_field(config)
    traj = traj or trial_trajectory(config, trial_index)
    noise = NoiseParams(config.sigma, trial_seed(config, trial_index))
    return [render_frame(base, traj, noise, i) for i in range(traj.total_frames)]


def run_trial(config: TrialConfig, trial_index: int, keep_result: bool = False,
              dump: DumpOptions | None = None):
    """Simulate and process one transit; with ``keep_result`` also return the detection."""
    _, base = campaign_field(config)
    seed = trial_seed(config, trial_index)
    traj = trial_trajectory(config, trial_index)
    frames = trial_frames(config, trial_index, traj)
    params = dataclasses.replace(config.ransac, seed=seed)

    t0 = time.perf_counter()
    result = process_sequence(frames, config.k, config.j, params)
    elapsed = time.perf_counter() - t0

    record = TrialRecord(
        trial_index=trial_index,
        detected=result.detected,
        loss=result.loss,
        inliers=result.inlier_count,
        trajectory_error=trajectory_error(traj, result.model) if result.detected else None,
        occlusion_coverage=coverage_from_base(traj, base),
        per_frame_time=elapsed / len(frames),
        anomaly_count=result.anomaly_count,
    )
    if dump is not None and (dump.frames or dump.anomalies):
        out = Path(dump.directory) / f"trial_{trial_index:05d}"
        out.mkdir(parents=True, exist_ok=True)
        if dump.frames:
            for f in frames:
                write_pgm(f, out / FRAME_NAME.format(f.index))
        if dump.anomalies:
            (out / "anomalies.csv").write_text(result.anomalies.to_csv())
    if keep_result:
        return record, result, traj, frames
    return record


def _run_one(args):
    config, idx, dump = args
    return run_trial(config, idx, dump=dump)


def summarize(records, config: TrialConfig | None = None, metadata: dict | None = None) -> CampaignReport:
    records = tuple(sorted(records, key=lambda r: r.trial_index))
    n = len(records)
    errs = np.array([r.trajectory_error for r in records if r.detected], dtype=float)
    meta = dict(metadata or {})
    if config is not None:
        meta.setdefault("config", config.to_dict())
        meta.setdefault("seeding", {
            "catalog": "keyed(master_seed, CATALOG)",
            "trial_seed": "derive_seed(master_seed, TRIAL, trial_index)",
            "trajectory": "keyed(trial_seed, TRAJECTORY)",
            "noise": "keyed(trial_seed, NOISE, frame_index)",
            "ransac": "keyed(trial_seed, RANSAC)",
        })
    detections = int(sum(r.detected for r in records))
    return CampaignReport(
        n_trials=n,
        detections=detections,
        detection_rate=detections / n if n else 0.0,
        mean_trajectory_error=float(errs.mean()) if len(errs) else None,
        std_trajectory_error=float(errs.std()) if len(errs) else None,
        mean_coverage=float(np.mean([r.occlusion_coverage for r in records])) if n else 0.0,
        mean_frame_time=float(np.mean([r.per_frame_time for r in records])) if n else 0.0,
        records=records,
        metadata=meta,
    )


def run_campaign(config: TrialConfig, n_trials: int, workers: int | None = None,
                 progress=None, dump: DumpOptions | None = None) -> CampaignReport:
    """Run trials ``0 .. n_trials-1``; results do not depend on ``workers``."""
    if n_trials < 1:
        raise InvalidArgumentError("n_trials must be >= 1")
    workers = workers or os.cpu_count() or 1
    jobs = [(config, i, dump) for i in range(n_trials)]
    if workers == 1:
        records = []
        for job in jobs:
            records.append(_run_one(job))
            if progress:
                progress(records[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, n_trials // (4 * workers))))
    return summarize(records, config)


# -- calibration ----------------------------------------------------------


def mean_coverage(config: TrialConfig, star_count: int, n_trials: int = 50) -> float:
    cat = generate_catalog(config.master_seed, star_count, config.width, config.height,
                           config.mag_min, config.mag_max)
    base = render_base_frame(cat, config.photometry)
    return float(np.mean([
        coverage_from_base(trial_trajectory(config, i), base) for i in range(n_trials)
    ]))


def calibrate_density(target_coverage: float, config: TrialConfig = TrialConfig(),
                      n_trials: int = 50, max_stars: int = 10**6, tolerance: float = 0.05) -> int:
    """Smallest star count whose mean occlusion coverage reaches the target.

    Catalogs for growing counts are nested and duplicate merging keeps the
    brighter star, so the rendered star pixels only ever gain members and
    mean coverage over a fixed set of trajectories is non-decreasing in the
    count; plain integer bisection therefore applies.
    """
    if not 0 < target_coverage < 1:
        raise InvalidArgumentError("target coverage must lie strictly between 0 and 1")
    if n_trials < 1:
        raise InvalidArgumentError("n_trials must be >= 1")

    cache: dict[int, float] = {}

    def cov(n):
        if n not in cache:
            cache[n] = mean_coverage(config, n, n_trials)
        return cache[n]

    lo, hi = 1, max_stars
    if cov(hi) < target_coverage - tolerance:
        raise CalibrationError(
            f"coverage {cov(hi):.3f} at {hi} stars is below target {target_coverage}"
        )
    if cov(lo) >= target_coverage:
        hi = lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cov(mid) >= target_coverage:
            hi = mid
        else:
            lo = mid
    best = min((lo, hi), key=lambda n: (abs(cov(n) - target_coverage), n))
    if abs(cov(best) - target_coverage) > tolerance:
        raise CalibrationError(
            f"coverage jumps past target {target_coverage}: {cov(lo):.3f} at {lo}, {cov(hi):.3f} at {hi}"
        )
    log.info("calibrated star_count=%d (coverage %.3f)", best, cov(best))
    return best
