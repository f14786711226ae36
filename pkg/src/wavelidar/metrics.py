"""
Evaluation metrics for extraction maps: depth precision against ground
truth or against a fitted plane, threshold percentages, outlier fractions,
and velocity mean absolute error over moving pixels.

Depth outliers are pixels with more than 50 mm of depth error.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .core import ShapeError, WavelidarError

OUTLIER_THRESHOLD_M = 0.050


class FitError(WavelidarError):
    """Too few valid pixels to fit a plane."""


@dataclass
class MetricsReport:
    """Depth / velocity metrics; fields are None when not evaluated.

    velocity_defined is False when a velocity metric was requested but the
    scene has no moving pixels (the undefined-metric flag).
    """

    mean_depth_error_mm: float | None = None
    pct_within_2mm: float | None = None
    pct_within_6mm: float | None = None
    velocity_mae_mps: float | None = None
    outlier_fraction: float | None = None
    velocity_defined: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    def merged_with(self, other: "MetricsReport") -> "MetricsReport":
        """Combine two partial reports, preferring values that are set."""
        kwargs = {}
        for key, val in asdict(self).items():
            oval = getattr(other, key)
            kwargs[key] = val if oval is None else oval
        kwargs["velocity_defined"] = self.velocity_defined and other.velocity_defined
        return MetricsReport(**kwargs)


def _primary_depth(extractions) -> np.ndarray:
    depth = getattr(extractions, "depth", extractions)
    depth = np.asarray(depth, dtype=float)
    if depth.ndim == 3:
        depth = depth[..., 0]
    if depth.ndim != 2:
        raise ShapeError(f"expected an (H, W) depth map, got shape {depth.shape}")
    return depth


def _primary_velocity(extractions) -> np.ndarray:
    vel = getattr(extractions, "velocity", extractions)
    vel = np.asarray(vel, dtype=float)
    if vel.ndim == 3:
        vel = vel[..., 0]
    if vel.ndim != 2:
        raise ShapeError(f"expected an (H, W) velocity map, got shape {vel.shape}")
    return vel


def fit_plane_depth(depth: np.ndarray) -> np.ndarray:
    """Least-squares affine fit depth ~ a*i + b*j + c over valid pixels."""
    valid = np.isfinite(depth)
    if np.count_nonzero(valid) < 3:
        raise FitError("plane fit requires at least 3 valid pixels")
    ii, jj = np.meshgrid(np.arange(depth.shape[0]), np.arange(depth.shape[1]),
                         indexing="ij")
    a = np.stack([ii[valid], jj[valid], np.ones(valid.sum())], axis=1)
    coef, *_ = np.linalg.lstsq(a, depth[valid], rcond=None)
    return coef[0] * ii + coef[1] * jj + coef[2]


def evaluate_depth(extractions, gt, plane_fit: bool = False) -> MetricsReport:
    """Depth metrics of the primary extracted surface.

    plane_fit=True measures deviations from a least-squares plane fitted to
    the extracted depths (ground truth unused); otherwise deviations from
    the ground-truth depth map. Pixels without ground truth (NaN) are
    skipped.
    """
    depth = _primary_depth(extractions)
    if plane_fit:
        reference = fit_plane_depth(depth)
    else:
        reference = np.asarray(gt.depth_map, dtype=float)
        if reference.shape != depth.shape:
            raise ShapeError("extraction and ground-truth shapes differ")
    err = np.abs(depth - reference)
    err = err[np.isfinite(err)]
    if err.size == 0:
        raise ShapeError("no valid pixels to evaluate")
    return MetricsReport(
        mean_depth_error_mm=float(np.mean(err) * 1e3),
        pct_within_2mm=float(np.mean(err < 2e-3) * 100.0),
        pct_within_6mm=float(np.mean(err < 6e-3) * 100.0),
        outlier_fraction=float(np.mean(err > OUTLIER_THRESHOLD_M)),
    )


def evaluate_velocity(extractions, gt) -> MetricsReport:
    """Velocity MAE over moving pixels (ground-truth velocity nonzero)."""
    vel = _primary_velocity(extractions)
    gt_vel = np.asarray(gt.velocity_map, dtype=float)
    if gt_vel.shape != vel.shape:
        raise ShapeError("extraction and ground-truth shapes differ")
    moving = np.isfinite(gt_vel) & (gt_vel != 0.0)
    if not np.any(moving):
        return MetricsReport(velocity_defined=False)
    mae = float(np.mean(np.abs(vel[moving] - gt_vel[moving])))
    return MetricsReport(velocity_mae_mps=mae)


def evaluate(extractions, gt, plane_fit: bool = False,
             velocity: bool = True) -> MetricsReport:
    report = evaluate_depth(extractions, gt, plane_fit=plane_fit)
    if velocity:
        report = report.merged_with(evaluate_velocity(extractions, gt))
    return report
