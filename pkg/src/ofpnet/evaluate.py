"""Y-channel PSNR/SSIM metrics, report tables, and EPI export.

Metric conventions, stated once and carried into every report:

* PSNR per view is 10*log10(1 / MSE) on the [0, 1] range, computed in
  float64, capped at 100 dB for identical images.
* SSIM per view is single-scale with an 11x11 Gaussian window (sigma 1.5),
  K1 = 0.01, K2 = 0.03, dynamic range 1.0, population (biased) covariance,
  averaged over the valid region only (no padded borders).
* Scene scores average the per-view values over all U*V views; aggregate
  scores average the per-scene means with equal scene weighting. No border
  cropping is applied before either metric.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage
from PIL import Image

from .data import LightFieldDataset
from .errors import ColorspaceError, ReportError, SizeError
from .lightfield import (
    Colorspace,
    EpiOrientation,
    LightField,
    ScaleTag,
    extract_epi,
    extract_y,
    replace_y,
    rgb_to_ycbcr,
    save_lightfield,
    scale_tag_for,
)
from .model import OFPNet, super_resolve

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
VIEW_AGGREGATION = "mean over all views"


# ---------------------------------------------------------------------------
# Per-view metrics
# ---------------------------------------------------------------------------


def _check_pair(sr: LightField, gt: LightField) -> None:
    if sr.colorspace is not Colorspace.Y or gt.colorspace is not Colorspace.Y:
        raise ColorspaceError("metrics are defined on Y fields")
    if sr.data.shape != gt.data.shape:
        raise SizeError(f"shape mismatch {sr.data.shape} vs {gt.data.shape}")


def _psnr_view(a: np.ndarray, b: np.ndarray) -> float:
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def _gaussian_kernel_1d(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


_SSIM_K1D = _gaussian_kernel_1d(SSIM_WINDOW // 2, SSIM_SIGMA)


def _window_mean(img: np.ndarray) -> np.ndarray:
    """Valid-region separable convolution with the SSIM Gaussian window."""
    r = SSIM_WINDOW // 2
    tmp = scipy.ndimage.convolve1d(img, _SSIM_K1D, axis=0, mode="constant")
    tmp = scipy.ndimage.convolve1d(tmp, _SSIM_K1D, axis=1, mode="constant")
    return tmp[r:-r, r:-r]


def _ssim_view(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _window_mean(a)
    mu_b = _window_mean(b)
    var_a = _window_mean(a * a) - mu_a**2
    var_b = _window_mean(b * b) - mu_b**2
    cov = _window_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr_grid(sr: LightField, gt: LightField) -> np.ndarray:
    _check_pair(sr, gt)
    un, vn = sr.angular_size
    out = np.empty((un, vn), dtype=np.float64)
    for u in range(un):
        for v in range(vn):
            out[u, v] = _psnr_view(sr.data[u, v, ..., 0], gt.data[u, v, ..., 0])
    return out


def ssim_grid(sr: LightField, gt: LightField) -> np.ndarray:
    _check_pair(sr, gt)
    h, w = sr.spatial_size
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise SizeError(
            f"images {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    un, vn = sr.angular_size
    out = np.empty((un, vn), dtype=np.float64)
    for u in range(un):
        for v in range(vn):
            out[u, v] = _ssim_view(sr.data[u, v, ..., 0], gt.data[u, v, ..., 0])
    return out


def psnr_y(sr: LightField, gt: LightField) -> float:
    """View-averaged luma PSNR in dB; identical fields report the cap."""
    return float(np.mean(psnr_grid(sr, gt)))


def ssim_y(sr: LightField, gt: LightField) -> float:
    """View-averaged luma SSIM."""
    return float(np.mean(ssim_grid(sr, gt)))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class SceneMetrics:
    per_view_psnr: list[list[float]]
    per_view_ssim: list[list[float]]
    mean_psnr: float
    mean_ssim: float


@dataclass
class MetricsReport:
    variant_label: str
    config_fingerprint: str
    scale: int
    split: str
    per_scene: dict[str, SceneMetrics] = field(default_factory=dict)
    aggregate_psnr: float = float("nan")
    aggregate_ssim: float = float("nan")
    view_aggregation: str = VIEW_AGGREGATION


def _evaluate_fn(
    sr_fn,
    dataset: LightFieldDataset,
    split: str,
    scale: int,
    *,
    variant_label: str,
    config_fingerprint: str,
    dump_sr_dir: str | Path | None = None,
) -> MetricsReport:
    tag = scale_tag_for(scale)
    scene_ids = dataset.scene_ids(split)
    if not scene_ids:
        raise ReportError(f"split {split!r} has no scenes to evaluate")
    report = MetricsReport(
        variant_label=variant_label,
        config_fingerprint=config_fingerprint,
        scale=scale,
        split=split,
    )
    for scene_id in scene_ids:
        lr_y = dataset.load_y(scene_id, tag)
        gt_y = dataset.load_y(scene_id, ScaleTag.GT)
        sr_y = sr_fn(lr_y)
        p = psnr_grid(sr_y, gt_y)
        s = ssim_grid(sr_y, gt_y)
        report.per_scene[scene_id] = SceneMetrics(
            per_view_psnr=p.tolist(),
            per_view_ssim=s.tolist(),
            mean_psnr=float(np.mean(p)),
            mean_ssim=float(np.mean(s)),
        )
        if dump_sr_dir is not None:
            # RGB dumps reuse the low-resolution chroma planes untouched.
            lr_ycbcr = rgb_to_ycbcr(dataset.load_rgb(scene_id, tag))
            save_lightfield(
                replace_y(lr_ycbcr, sr_y), Path(dump_sr_dir) / scene_id
            )
    scene_values = list(report.per_scene.values())
    report.aggregate_psnr = float(np.mean([m.mean_psnr for m in scene_values]))
    report.aggregate_ssim = float(np.mean([m.mean_ssim for m in scene_values]))
    return report


def evaluate_model(
    model: OFPNet,
    dataset: LightFieldDataset,
    split: str,
    scale: int,
    *,
    variant_label: str = "ofpnet",
    config_fingerprint: str = "",
    dump_sr_dir: str | Path | None = None,
) -> MetricsReport:
    """Forward every scene's LR luma through the model and score against GT."""
    return _evaluate_fn(
        lambda lr: super_resolve(model, lr),
        dataset, split, scale,
        variant_label=variant_label,
        config_fingerprint=config_fingerprint,
        dump_sr_dir=dump_sr_dir,
    )


def evaluate_baseline(
    dataset: LightFieldDataset,
    split: str,
    scale: int,
    *,
    variant_label: str = "identity",
    config_fingerprint: str = "baseline:identity",
) -> MetricsReport:
    """Score the stored LR field itself against GT (the identity baseline).

    Stored LR views already live on the ground-truth grid, so the identity
    map is also the bicubic-upsampling baseline.
    """
    return _evaluate_fn(
        lambda lr: lr,
        dataset, split, scale,
        variant_label=variant_label,
        config_fingerprint=config_fingerprint,
    )


def report_to_json(report: MetricsReport) -> dict:
    return dataclasses.asdict(report)


def write_report(report: MetricsReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Per-scene CSV and aligned-text files named after the variant label."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report.variant_label.replace(":", "_").replace("/", "_")
    csv_path = out_dir / f"report_{stem}.csv"
    txt_path = out_dir / f"report_{stem}.txt"

    lines = ["scene,psnr_db,ssim"]
    for scene_id in sorted(report.per_scene):
        m = report.per_scene[scene_id]
        lines.append(f"{scene_id},{m.mean_psnr:.6f},{m.mean_ssim:.6f}")
    lines.append(f"aggregate,{report.aggregate_psnr:.6f},{report.aggregate_ssim:.6f}")
    csv_path.write_text("\n".join(lines) + "\n")

    width = max(len("scene"), *(len(s) for s in report.per_scene), len("aggregate"))
    rows = [
        f"variant: {report.variant_label}  scale: x{report.scale}  "
        f"split: {report.split}  fingerprint: {report.config_fingerprint}",
        f"view aggregation: {report.view_aggregation}",
        f"{'scene':<{width}}  {'PSNR (dB)':>10}  {'SSIM':>8}",
    ]
    for scene_id in sorted(report.per_scene):
        m = report.per_scene[scene_id]
        rows.append(f"{scene_id:<{width}}  {m.mean_psnr:>10.4f}  {m.mean_ssim:>8.4f}")
    rows.append(
        f"{'aggregate':<{width}}  {report.aggregate_psnr:>10.4f}  "
        f"{report.aggregate_ssim:>8.4f}"
    )
    txt_path.write_text("\n".join(rows) + "\n")
    return csv_path, txt_path


# Flags shown in the ablation table: (low, mid, high, interaction, projection).
_VARIANT_FLAGS = {
    "freq:h": (False, False, True, True, True),
    "freq:mh": (False, True, True, True, True),
    "freq:lmh": (True, True, True, True, True),
    "proj:none": (True, True, True, False, False),
    "proj:interact": (True, True, True, True, False),
    "proj:fp": (True, True, True, False, True),
    "proj:full": (True, True, True, True, True),
}


def emit_table(
    reports: list[MetricsReport],
    layout: str,
    out_dir: str | Path,
    name: str | None = None,
) -> tuple[Path, Path]:
    """Assemble reports into a CSV + aligned-text table.

    Layouts: `table1`/`table2` list one method per row with PSNR/SSIM
    columns grouped by scale; `table3` is the ablation layout with one
    variant per row and component flags.
    """
    if layout not in ("table1", "table2", "table3"):
        raise ReportError(f"unknown table layout {layout!r}")
    if not reports:
        raise ReportError("no reports to tabulate")
    # table1/2 gather one method across scales, so only the pair must be
    # unique; table3 has one row per variant.
    keys = [
        r.variant_label if layout == "table3" else (r.variant_label, r.scale)
        for r in reports
    ]
    if len(set(keys)) != len(keys):
        raise ReportError(f"duplicate table rows for {keys}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = name or layout
    csv_path = out_dir / f"{stem}.csv"
    txt_path = out_dir / f"{stem}.txt"

    def mark(flag: bool) -> str:
        return "yes" if flag else "no"

    if layout == "table3":
        header = ["variant", "f_low", "f_mid", "f_high", "interaction",
                  "projection", "psnr_db", "ssim"]
        rows = []
        for r in reports:
            flags = _VARIANT_FLAGS.get(r.variant_label, (None,) * 5)
            rows.append(
                [r.variant_label]
                + ["-" if f is None else mark(f) for f in flags]
                + [f"{r.aggregate_psnr:.4f}", f"{r.aggregate_ssim:.4f}"]
            )
    else:
        scales = sorted({r.scale for r in reports})
        header = ["method"] + [
            col for s in scales for col in (f"x{s}_psnr_db", f"x{s}_ssim")
        ]
        by_label: dict[str, dict[int, MetricsReport]] = {}
        for r in reports:
            by_label.setdefault(r.variant_label, {})[r.scale] = r
        rows = []
        for label, per_scale in by_label.items():
            row = [label]
            for s in scales:
                r = per_scale.get(s)
                row += (
                    [f"{r.aggregate_psnr:.4f}", f"{r.aggregate_ssim:.4f}"]
                    if r else ["-", "-"]
                )
            rows.append(row)

    csv_path.write_text(
        "\n".join([",".join(header)] + [",".join(row) for row in rows]) + "\n"
    )
    widths = [
        max(len(header[i]), *(len(row[i]) for row in rows)) for i in range(len(header))
    ]
    txt_lines = [
        "  ".join(f"{header[i]:<{widths[i]}}" for i in range(len(header))),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        txt_lines.append("  ".join(f"{row[i]:<{widths[i]}}" for i in range(len(row))))
    txt_lines.append(f"(view aggregation: {reports[0].view_aggregation})")
    txt_path.write_text("\n".join(txt_lines) + "\n")
    return csv_path, txt_path


# ---------------------------------------------------------------------------
# EPI export and slope estimation
# ---------------------------------------------------------------------------


def export_epi_strip(
    lf: LightField,
    rows: list[tuple[int, int]],
    out_dir: str | Path,
    orientation: EpiOrientation = EpiOrientation.HORIZONTAL,
    magnify: int = 8,
) -> list[Path]:
    """Write one PNG per requested (view_index, line_index) EPI.

    Rows are repeated `magnify` times vertically so the few-view strip is
    legible; the underlying EPI has one row per view.
    """
    if lf.colorspace is not Colorspace.Y:
        lf = extract_y(lf)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for view_index, line_index in rows:
        epi = extract_epi(lf, orientation, view_index, line_index)
        strip = np.repeat(epi.data, magnify, axis=0)
        quant = np.round(np.clip(strip, 0.0, 1.0) * 255.0).astype(np.uint8)
        path = out_dir / (
            f"epi_{orientation.value}_v{view_index}_l{line_index}.png"
        )
        Image.fromarray(quant).save(path)
        paths.append(path)
    return paths


def _subpixel_shift(a: np.ndarray, b: np.ndarray, max_shift: float) -> float:
    """Shift s (in pixels, rightward positive) with b(x) ~= a(x - s).

    Zero-padded FFT cross-correlation upsampled 16x, refined with a
    parabolic fit around the peak.
    """
    a = a.astype(np.float64) - a.mean()
    b = b.astype(np.float64) - b.mean()
    window = np.hanning(len(a))
    a = a * window
    b = b * window
    n = len(a)
    up = 16
    fa = np.fft.rfft(a, 2 * n)
    fb = np.fft.rfft(b, 2 * n)
    cc = np.fft.irfft(fa.conj() * fb, 2 * n * up)
    lags = np.arange(2 * n * up, dtype=np.float64) / up
    lags[lags >= n] -= 2 * n
    valid = np.abs(lags) <= max_shift
    idx = np.flatnonzero(valid)[np.argmax(cc[valid])]
    c0, c1, c2 = cc[idx - 1], cc[idx], cc[(idx + 1) % len(cc)]
    denom = c0 - 2 * c1 + c2
    frac = 0.0 if denom == 0 else 0.5 * (c0 - c2) / denom
    return float(lags[idx] + frac / up)


def estimate_epi_slope(epi_data: np.ndarray, max_disparity: float = 4.0) -> float:
    """Fit the line slope of an EPI in pixels per view.

    Each row's subpixel shift relative to the first row is estimated by
    phase correlation; the slope is the least-squares line through the
    (view index, shift) points.
    """
    if epi_data.ndim != 2 or epi_data.shape[0] < 2:
        raise SizeError(f"need a (views, pixels) EPI, got shape {epi_data.shape}")
    n_views = epi_data.shape[0]
    shifts = [0.0]
    for v in range(1, n_views):
        shifts.append(
            _subpixel_shift(epi_data[0], epi_data[v], max_disparity * (n_views - 1))
        )
    coeffs = np.polyfit(np.arange(n_views), np.asarray(shifts), 1)
    return float(coeffs[0])


def estimate_lf_disparity(lf: LightField, n_lines: int = 5) -> float:
    """Median EPI slope over a spread of horizontal and vertical slices."""
    if lf.colorspace is not Colorspace.Y:
        lf = extract_y(lf)
    un, vn = lf.angular_size
    h, w = lf.spatial_size
    slopes = []
    for line in np.linspace(h * 0.2, h * 0.8, n_lines).astype(int):
        epi = extract_epi(lf, EpiOrientation.HORIZONTAL, un // 2, int(line))
        slopes.append(estimate_epi_slope(epi.data))
    for line in np.linspace(w * 0.2, w * 0.8, n_lines).astype(int):
        epi = extract_epi(lf, EpiOrientation.VERTICAL, vn // 2, int(line))
        slopes.append(estimate_epi_slope(epi.data))
    return float(np.median(slopes))
