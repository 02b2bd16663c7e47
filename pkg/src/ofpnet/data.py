"""Dataset indexing, scene splits, degradation synthesis, and batch sampling.

On-disk layout (one directory per scene):

    <root>/<scene_id>/gt/view_{u}_{v}.png
    <root>/<scene_id>/lr_x2/view_{u}_{v}.png
    <root>/<scene_id>/lr_x4/view_{u}_{v}.png

Low-resolution views are stored back on the ground-truth pixel grid
(downscaled then upscaled by the same factor), so every scale of a scene
shares one geometry and models are resolution preserving. Splits live in
`<root>/splits.json`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.ndimage
from PIL import Image

from .errors import (
    ConfigError,
    DataError,
    EmptyDataset,
    InconsistentViews,
    MissingView,
    SizeError,
    SplitError,
)
from .lightfield import (
    VIEW_FILE_RE,
    Colorspace,
    LightField,
    ScaleTag,
    extract_patch,
    extract_y,
    load_lightfield,
    resize_views,
    save_lightfield,
    scale_tag_for,
)

log = logging.getLogger(__name__)

SCALE_DIRS = {ScaleTag.GT: "gt", ScaleTag.LR_X2: "lr_x2", ScaleTag.LR_X4: "lr_x4"}
SPLIT_FILE = "splits.json"


# ---------------------------------------------------------------------------
# Indexing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    path: Path
    available_scales: frozenset[ScaleTag]
    angular_size: tuple[int, int]
    spatial_size: tuple[int, int]


def _scan_view_dir(directory: Path) -> tuple[tuple[int, int], tuple[int, int]]:
    """Check a view directory for grid completeness; returns (U, V), (H, W).

    Only PNG headers are read, so this stays cheap for large trees.
    """
    found = {}
    for path in directory.glob("view_*.png"):
        m = VIEW_FILE_RE.match(path.name)
        if m:
            found[(int(m.group(1)), int(m.group(2)))] = path
    if not found:
        raise MissingView(0, 0, str(directory))
    un = max(u for u, _ in found) + 1
    vn = max(v for _, v in found) + 1
    size = None
    for u in range(un):
        for v in range(vn):
            path = found.get((u, v))
            if path is None:
                raise MissingView(u, v, str(directory))
            with Image.open(path) as img:
                this = (img.size[1], img.size[0])
            if size is None:
                size = this
            elif this != size:
                raise InconsistentViews(
                    f"{path}: size {this} differs from {size}"
                )
    return (un, vn), size


def index_dataset(root: str | Path) -> list[SceneRecord]:
    """Build one record per scene directory holding a complete gt/ grid.

    Scenes with an incomplete or inconsistent gt grid are reported via
    logging and skipped; low-resolution directories that do not match the
    ground-truth geometry are excluded from `available_scales` the same way.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"dataset root {root} does not exist")
    scene_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not scene_dirs:
        raise EmptyDataset(f"dataset root {root} contains no scene directories")

    records = []
    for scene in scene_dirs:
        gt_dir = scene / SCALE_DIRS[ScaleTag.GT]
        try:
            angular, size = _scan_view_dir(gt_dir)
        except (MissingView, InconsistentViews) as exc:
            log.warning("skipping scene %s: %s", scene.name, exc)
            continue
        scales = {ScaleTag.GT}
        for tag in (ScaleTag.LR_X2, ScaleTag.LR_X4):
            lr_dir = scene / SCALE_DIRS[tag]
            if not lr_dir.is_dir():
                continue
            try:
                lr_angular, lr_size = _scan_view_dir(lr_dir)
            except (MissingView, InconsistentViews) as exc:
                log.warning("scene %s: excluding %s: %s", scene.name, tag.value, exc)
                continue
            if lr_angular != angular or lr_size != size:
                log.warning(
                    "scene %s: excluding %s: geometry %s/%s does not match gt %s/%s",
                    scene.name, tag.value, lr_angular, lr_size, angular, size,
                )
                continue
            scales.add(tag)
        records.append(
            SceneRecord(
                scene_id=scene.name,
                path=scene,
                available_scales=frozenset(scales),
                angular_size=angular,
                spatial_size=size,
            )
        )
    if not records:
        raise EmptyDataset(f"no usable scenes under {root}")
    return records


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self):
        groups = [set(self.train), set(self.val), set(self.test)]
        total = sum(len(g) for g in groups)
        if len(set().union(*groups)) != total:
            raise SplitError("split groups overlap")

    def ids(self, split: str) -> tuple[str, ...]:
        if split not in ("train", "val", "test"):
            raise SplitError(f"unknown split {split!r}")
        return getattr(self, split)


def split_scenes(
    records: list[SceneRecord], counts: tuple[int, int, int], seed: int
) -> SplitManifest:
    """Deterministically partition scenes into train/val/test by count.

    Scene ids are sorted before shuffling so the result depends only on the
    id set and the seed, not on indexing order. When the counts sum to fewer
    scenes than available the remainder is left unassigned.
    """
    if len(counts) != 3 or any(c < 0 for c in counts):
        raise SplitError(f"counts must be three non-negative ints, got {counts}")
    ids = sorted(r.scene_id for r in records)
    if sum(counts) > len(ids):
        raise SplitError(
            f"requested {counts} = {sum(counts)} scenes but only {len(ids)} available"
        )
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_tr, n_va, n_te = counts
    return SplitManifest(
        train=tuple(shuffled[:n_tr]),
        val=tuple(shuffled[n_tr : n_tr + n_va]),
        test=tuple(shuffled[n_tr + n_va : n_tr + n_va + n_te]),
        seed=seed,
    )


def write_split(manifest: SplitManifest, root: str | Path) -> Path:
    path = Path(root) / SPLIT_FILE
    payload = {
        "train": list(manifest.train),
        "val": list(manifest.val),
        "test": list(manifest.test),
        "seed": manifest.seed,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def read_split(root: str | Path) -> SplitManifest:
    path = Path(root) / SPLIT_FILE
    if not path.is_file():
        raise SplitError(f"no split manifest at {path}")
    try:
        payload = json.loads(path.read_text())
        return SplitManifest(
            train=tuple(payload["train"]),
            val=tuple(payload["val"]),
            test=tuple(payload["test"]),
            seed=int(payload.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SplitError(f"malformed split manifest {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Degradation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BicubicDownUp:
    """Downscale by `factor` and upscale back onto the original grid."""

    factor: int

    def __post_init__(self):
        if self.factor not in (1, 2, 4):
            raise ConfigError(f"bicubic factor must be 1, 2 or 4, got {self.factor}")


@dataclass(frozen=True)
class GaussianBlur:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"blur sigma must be non-negative, got {self.sigma}")


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"noise sigma must be non-negative, got {self.sigma}")


@dataclass(frozen=True)
class JpegLikeSmoothing:
    """Zero high-frequency coefficients of an 8x8 blockwise DCT.

    `strength` in [0, 1] sets the fraction of coefficient anti-diagonals
    dropped; 0 keeps every coefficient.
    """

    strength: float

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ConfigError(f"jpeg strength must be in [0, 1], got {self.strength}")


Step = BicubicDownUp | GaussianBlur | GaussianNoise | JpegLikeSmoothing


@dataclass(frozen=True)
class DegradationChain:
    """An ordered list of degradation steps applied identically to all views.

    `view_jitter` optionally scales blur/noise strength per view by
    (1 + jitter * eps) with eps ~ U(-1, 1) drawn once per view; the default 0
    keeps every view statistically identical.
    """

    steps: tuple[Step, ...]
    seed: int = 0
    view_jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.view_jitter <= 0.5:
            raise ConfigError(f"view_jitter must be in [0, 0.5], got {self.view_jitter}")


def parse_chain(spec: str, scale: int, seed: int = 0) -> DegradationChain:
    """Build a chain from a compact spec like "bicubic+blur:0.8+noise:0.01".

    Tokens: `bicubic` (down-up at the pair's scale), `blur:SIGMA`,
    `noise:SIGMA`, `jpeg:STRENGTH`, `none` (empty chain).
    """
    steps: list[Step] = []
    for token in spec.replace(",", "+").split("+"):
        token = token.strip()
        if not token or token == "none":
            continue
        name, _, arg = token.partition(":")
        try:
            if name == "bicubic":
                steps.append(BicubicDownUp(int(arg) if arg else scale))
            elif name == "blur":
                steps.append(GaussianBlur(float(arg)))
            elif name == "noise":
                steps.append(GaussianNoise(float(arg)))
            elif name == "jpeg":
                steps.append(JpegLikeSmoothing(float(arg)))
            else:
                raise ConfigError(f"unknown degradation step {name!r}")
        except ValueError as exc:
            raise ConfigError(f"bad argument in degradation token {token!r}") from exc
    return DegradationChain(steps=tuple(steps), seed=seed)


def _jpeg_like(img: np.ndarray, strength: float) -> np.ndarray:
    """Blockwise DCT truncation on the trailing two axes."""
    h, w = img.shape[-2:]
    ph, pw = (-h) % 8, (-w) % 8
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    x = np.pad(img, pad, mode="reflect") if (ph or pw) else img
    hb, wb = x.shape[-2] // 8, x.shape[-1] // 8
    blocks = x.reshape(*x.shape[:-2], hb, 8, wb, 8)
    coef = scipy.fft.dctn(blocks, axes=(-3, -1), norm="ortho")
    ii, jj = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    keep = (ii + jj) <= round((1.0 - strength) * 14)
    coef = coef * keep[:, None, :].reshape(8, 1, 8)
    out = scipy.fft.idctn(coef, axes=(-3, -1), norm="ortho")
    out = out.reshape(*x.shape)
    return out[..., :h, :w]


def _apply_step(step: Step, views: np.ndarray, rng: np.random.Generator,
                strength_scale: float = 1.0) -> np.ndarray:
    # views: (..., H, W) float32, channel folded into the leading axes.
    if isinstance(step, BicubicDownUp):
        h, w = views.shape[-2:]
        if h % step.factor or w % step.factor:
            raise SizeError(
                f"spatial size {h}x{w} not divisible by bicubic factor {step.factor}"
            )
        return resize_views(resize_views(views, 1.0 / step.factor), float(step.factor))
    if isinstance(step, GaussianBlur):
        sigma = step.sigma * strength_scale
        if sigma == 0:
            return views
        pointwise = (0,) * (views.ndim - 2)
        return scipy.ndimage.gaussian_filter(views, sigma=pointwise + (sigma, sigma),
                                             mode="reflect").astype(views.dtype)
    if isinstance(step, GaussianNoise):
        noise = rng.normal(0.0, step.sigma * strength_scale, size=views.shape)
        return (views + noise).astype(views.dtype)
    if isinstance(step, JpegLikeSmoothing):
        return _jpeg_like(views, step.strength).astype(views.dtype)
    raise ConfigError(f"unknown degradation step type {type(step).__name__}")


def apply_chain(chain: DegradationChain, lf: LightField) -> LightField:
    """Run every step over all views; output is clamped to [0, 1]."""
    un, vn = lf.angular_size
    # (U, V, C, H, W) so per-view processing maps onto the trailing axes.
    views = np.moveaxis(lf.data, -1, 2).copy()
    rng = np.random.default_rng(chain.seed)
    if chain.view_jitter > 0:
        eps = rng.uniform(-1.0, 1.0, size=un * vn)
        scales = 1.0 + chain.view_jitter * eps
        flat = views.reshape(un * vn, *views.shape[2:])
        for step in chain.steps:
            for i in range(un * vn):
                flat[i] = _apply_step(step, flat[i], rng, strength_scale=scales[i])
        views = flat.reshape(views.shape)
    else:
        for step in chain.steps:
            views = _apply_step(step, views, rng)
    data = np.clip(np.moveaxis(views, 2, -1), 0.0, 1.0).astype(np.float32)
    return replace(lf, data=data)


def generate_synthetic_pair(
    hr: LightField, scale: int, chain: DegradationChain | None = None
) -> tuple[LightField, LightField]:
    """Degrade a ground-truth field into an aligned (lr, hr) pair.

    `scale` tags the pair (1 leaves the tag untouched, useful for identity
    checks); the default chain is plain bicubic down-up at that scale. The
    low-resolution field lives on the ground-truth grid.
    """
    if scale not in (1, 2, 4):
        raise ConfigError(f"scale must be 1, 2 or 4, got {scale}")
    h, w = hr.spatial_size
    if h % scale or w % scale:
        raise SizeError(f"spatial size {h}x{w} not divisible by scale {scale}")
    if chain is None:
        chain = DegradationChain(
            steps=(BicubicDownUp(scale),) if scale > 1 else ()
        )
    lr = apply_chain(chain, hr)
    if scale > 1:
        lr = replace(lr, scale_tag=scale_tag_for(scale))
    return lr, hr


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


def synthesize_hr_scene(
    angular_size: tuple[int, int] = (5, 5),
    height: int = 96,
    width: int = 96,
    disparity: float = 1.0,
    seed: int = 0,
    n_waves: int = 40,
) -> LightField:
    """Procedural RGB light field with a single uniform disparity plane.

    The texture is a band-limited sum of oriented sinusoids (most energy
    below 0.22 cycles/px so a x4 chain keeps it partially recoverable).
    View (u, v) samples the texture at (y - d*(u - uc), x - d*(v - vc)),
    which makes EPI line slopes equal `disparity` pixels per view step.
    """
    rng = np.random.default_rng(seed)
    un, vn = angular_size
    uc, vc = (un - 1) / 2.0, (vn - 1) / 2.0

    def draw_waves() -> tuple[np.ndarray, ...]:
        # Stratified band counts (60/30/10 low/mid/high) so every scene has
        # the same spectral budget; a random draw would leave some scenes
        # with no recoverable detail at all.
        n_low, n_mid = round(0.6 * n_waves), round(0.3 * n_waves)
        bands = np.repeat(np.arange(3), [n_low, n_mid, n_waves - n_low - n_mid])
        lo = np.array([0.01, 0.10, 0.22])[bands]
        hi = np.array([0.10, 0.22, 0.35])[bands]
        mag = rng.uniform(lo, hi)
        ang = rng.uniform(0.0, np.pi, size=n_waves)
        amp = rng.uniform(0.4, 1.0, size=n_waves) / (1.0 + 8.0 * mag)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=n_waves)
        return mag * np.sin(ang), mag * np.cos(ang), amp, phase

    base = draw_waves()
    tint = draw_waves()
    mix = rng.uniform(-1.0, 1.0, size=3)

    def texture(waves, yy, xx):
        fy, fx, amp, phase = waves
        acc = np.zeros_like(yy)
        for k in range(len(amp)):
            acc += amp[k] * np.sin(
                2.0 * np.pi * (fy[k] * yy + fx[k] * xx) + phase[k]
            )
        return acc / np.sum(np.abs(amp))  # bounded within [-1, 1]

    ys, xs = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    data = np.empty((un, vn, height, width, 3), dtype=np.float32)
    for u in range(un):
        for v in range(vn):
            yy = ys - disparity * (u - uc)
            xx = xs - disparity * (v - vc)
            luma = 0.5 + 0.4 * texture(base, yy, xx)
            chroma = 0.08 * texture(tint, yy, xx)
            for c in range(3):
                data[u, v, ..., c] = luma + mix[c] * chroma
    return LightField(data=np.clip(data, 0.0, 1.0), colorspace=Colorspace.RGB)


def write_synthetic_dataset(
    root: str | Path,
    n_scenes: int,
    *,
    height: int = 96,
    width: int = 96,
    angular_size: tuple[int, int] = (5, 5),
    scales: tuple[int, ...] = (4,),
    chain_spec: str = "bicubic",
    disparity_range: tuple[float, float] = (-1.5, 1.5),
    seed: int = 0,
    split_counts: tuple[int, int, int] | None = None,
) -> list[SceneRecord]:
    """Generate `n_scenes` procedural scenes in the on-disk layout.

    Each scene gets its own derived seed and a disparity drawn uniformly
    from `disparity_range`. When `split_counts` is given a split manifest is
    written next to the scenes.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    meta_rng = np.random.default_rng(seed)
    children = np.random.SeedSequence(seed).spawn(n_scenes)
    for i in range(n_scenes):
        scene_seed = children[i].generate_state(1)[0]
        disparity = float(meta_rng.uniform(*disparity_range))
        hr = synthesize_hr_scene(
            angular_size=angular_size,
            height=height,
            width=width,
            disparity=disparity,
            seed=int(scene_seed),
        )
        scene_dir = root / f"scene_{i:03d}"
        save_lightfield(hr, scene_dir / SCALE_DIRS[ScaleTag.GT])
        # Degrade the quantized field actually stored on disk so (lr, gt)
        # stay consistent with what a reader sees.
        stored = load_lightfield(scene_dir / SCALE_DIRS[ScaleTag.GT])
        for s in scales:
            chain = parse_chain(chain_spec, s, seed=int(scene_seed) + s)
            lr, _ = generate_synthetic_pair(stored, s, chain)
            save_lightfield(lr, scene_dir / SCALE_DIRS[scale_tag_for(s)])
    records = index_dataset(root)
    if split_counts is not None:
        write_split(split_scenes(records, split_counts, seed), root)
    return records


def degrade_tree(
    in_root: str | Path,
    out_root: str | Path,
    *,
    scales: tuple[int, ...] = (4,),
    chain_spec: str = "bicubic",
    seed: int = 0,
) -> list[SceneRecord]:
    """Degrade existing ground-truth scenes into a fresh dataset tree.

    Accepts scenes shaped `<in>/<scene>/gt/view_*.png` or with views directly
    under `<in>/<scene>/`.
    """
    in_root, out_root = Path(in_root), Path(out_root)
    if not in_root.is_dir():
        raise EmptyDataset(f"input root {in_root} does not exist")
    scene_dirs = sorted(p for p in in_root.iterdir() if p.is_dir())
    if not scene_dirs:
        raise EmptyDataset(f"input root {in_root} contains no scene directories")
    for i, scene in enumerate(scene_dirs):
        src = scene / SCALE_DIRS[ScaleTag.GT]
        if not src.is_dir():
            src = scene
        hr = load_lightfield(src)
        out_scene = out_root / scene.name
        save_lightfield(hr, out_scene / SCALE_DIRS[ScaleTag.GT])
        for s in scales:
            chain = parse_chain(chain_spec, s, seed=seed + 977 * i + s)
            lr, _ = generate_synthetic_pair(hr, s, chain)
            save_lightfield(lr, out_scene / SCALE_DIRS[scale_tag_for(s)])
    return index_dataset(out_root)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


class LightFieldDataset:
    """A dataset root plus split manifest, with an in-memory luma cache.

    The cache holds full decoded Y fields keyed by (scene, scale); at desk
    scale this is a few megabytes. Pass `max_cached` to bound it for large
    trees.
    """

    def __init__(
        self,
        root: str | Path,
        records: list[SceneRecord] | None = None,
        manifest: SplitManifest | None = None,
        max_cached: int | None = None,
    ):
        self.root = Path(root)
        self.records = records if records is not None else index_dataset(root)
        self.manifest = manifest
        self.by_id = {r.scene_id: r for r in self.records}
        self.max_cached = max_cached
        self._cache: dict[tuple[str, ScaleTag], np.ndarray] = {}

    @classmethod
    def from_root(cls, root: str | Path, **kwargs) -> "LightFieldDataset":
        """Index `root` and read its split manifest."""
        return cls(root, manifest=read_split(root), **kwargs)

    def scene_ids(self, split: str) -> tuple[str, ...]:
        if self.manifest is None:
            raise SplitError(f"dataset at {self.root} has no split manifest")
        return self.manifest.ids(split)

    def record(self, scene_id: str) -> SceneRecord:
        rec = self.by_id.get(scene_id)
        if rec is None:
            raise DataError(f"scene {scene_id!r} not in index of {self.root}")
        return rec

    def view_dir(self, scene_id: str, tag: ScaleTag) -> Path:
        rec = self.record(scene_id)
        if tag not in rec.available_scales:
            raise DataError(f"scene {scene_id!r} has no {tag.value} views")
        return rec.path / SCALE_DIRS[tag]

    def load_rgb(self, scene_id: str, tag: ScaleTag) -> LightField:
        return load_lightfield(self.view_dir(scene_id, tag), Colorspace.RGB, tag)

    def load_y(self, scene_id: str, tag: ScaleTag) -> LightField:
        """Cached single-channel luma field for (scene, scale)."""
        key = (scene_id, tag)
        arr = self._cache.get(key)
        if arr is None:
            arr = extract_y(self.load_rgb(scene_id, tag)).data
            if self.max_cached is not None and len(self._cache) >= self.max_cached:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = arr
        return LightField(data=arr, colorspace=Colorspace.Y, scale_tag=tag)


def sample_batch(
    dataset: LightFieldDataset,
    split: str,
    *,
    batch: int,
    patch: int,
    scale: int,
    rng: np.random.Generator,
    with_meta: bool = False,
):
    """Draw `batch` aligned (lr, gt) luma patch pairs from one split.

    Scene choice and window position come from `rng`, so identical generator
    state reproduces the batch exactly. The same window is cropped from both
    scales of a scene. With `with_meta` a list of (scene_id, y0, x0) is
    returned alongside for provenance.
    """
    if scale not in (2, 4):
        raise ConfigError(f"sampling scale must be 2 or 4, got {scale}")
    tag = scale_tag_for(scale)
    ids = dataset.scene_ids(split)
    if not ids:
        raise SplitError(f"split {split!r} is empty")
    pool = [s for s in ids if tag in dataset.record(s).available_scales]
    if not pool:
        raise DataError(f"no scene in split {split!r} provides {tag.value} views")

    pairs = []
    meta = []
    for _ in range(batch):
        scene_id = pool[int(rng.integers(len(pool)))]
        rec = dataset.record(scene_id)
        h, w = rec.spatial_size
        if patch > min(h, w):
            raise SizeError(
                f"patch {patch} exceeds scene {scene_id!r} extent {h}x{w}"
            )
        y0 = int(rng.integers(h - patch + 1))
        x0 = int(rng.integers(w - patch + 1))
        lr = extract_patch(dataset.load_y(scene_id, tag), y0, x0, patch)
        gt = extract_patch(dataset.load_y(scene_id, ScaleTag.GT), y0, x0, patch)
        pairs.append((lr, gt))
        meta.append((scene_id, y0, x0))
    return (pairs, meta) if with_meta else pairs
