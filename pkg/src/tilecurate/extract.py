"""Tile extraction: tissue masking, grid tiling, and artifact filtering.

The tissue mask is computed at a coarse downsample (default 1/32) by Otsu
thresholding on HSV saturation; a hard saturation floor removes glass and
neutral-gray regions that Otsu alone can misclassify. Tiles are cut on a
non-overlapping grid anchored at (0, 0) and kept when their mask footprint
carries at least the configured tissue fraction (default 25%, chosen to
retain sparse tissues such as adipose).
"""

from __future__ import annotations

import concurrent.futures
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from PIL import Image
from skimage.color import rgb2hsv
from skimage.filters import threshold_otsu

from .imgqual import ContractError
from .slides import SlideSource

# Pen-mark heuristic: saturated blue/green hue bands (HSV hue in [0,1]).
PEN_HUE_BANDS = ((0.22, 0.45), (0.50, 0.72))
PEN_SATURATION = 0.7
PEN_FRACTION = 0.5


class ConfigurationError(ValueError):
    """Config and inputs disagree (dimensions, missing prerequisites)."""


@dataclass(frozen=True)
class ExtractionConfig:
    tile_px: int = 256
    mask_downsample: int = 32
    tissue_threshold: float = 0.25
    saturation_floor: float = 0.05
    blank_variance_floor: float = 1e-4

    def __post_init__(self):
        if self.tile_px <= 0:
            raise ConfigurationError(f"tile_px must be positive, got {self.tile_px}")
        if not 0.0 <= self.tissue_threshold <= 1.0:
            raise ConfigurationError(
                f"tissue_threshold must be in [0, 1], got {self.tissue_threshold}"
            )
        if self.mask_downsample <= 0:
            raise ConfigurationError(
                f"mask_downsample must be positive, got {self.mask_downsample}"
            )
        if self.blank_variance_floor < 0:
            raise ConfigurationError("blank_variance_floor must be nonnegative")


@dataclass(frozen=True)
class TileRecord:
    slide_id: str
    tile_id: str
    x: int
    y: int
    width: int
    height: int
    tissue_fraction: float
    path: str = ""

    @staticmethod
    def make_id(slide_id: str, x: int, y: int) -> str:
        return f"{slide_id}:{x}:{y}"


def _thumbnail(slide: SlideSource, downsample: int) -> np.ndarray:
    """Slide pixels block-averaged to ceil(level0 / downsample)."""
    w, h = slide.dimensions
    full = slide.reader.read_region(0, 0, 0, w, h)
    out_w = -(-w // downsample)
    out_h = -(-h // downsample)
    pad_h = out_h * downsample - h
    pad_w = out_w * downsample - w
    if pad_h or pad_w:
        full = np.pad(full, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    blocks = full.reshape(out_h, downsample, out_w, downsample, 3)
    return blocks.mean(axis=(1, 3))


def compute_tissue_mask(slide: SlideSource, cfg: ExtractionConfig) -> np.ndarray:
    """Boolean tissue mask at 1/mask_downsample scale.

    Foreground = Otsu threshold on the HSV saturation channel AND saturation
    at or above the configured floor. A degenerate (constant-saturation)
    image yields an all-background mask rather than an error.
    """
    thumb = _thumbnail(slide, cfg.mask_downsample)
    sat = rgb2hsv(thumb)[..., 1]
    if sat.max() - sat.min() < 1e-12:
        return np.zeros(sat.shape, dtype=bool)
    thresh = threshold_otsu(sat, nbins=256)
    return (sat > thresh) & (sat >= cfg.saturation_floor)


def extract_tile_grid(
    slide: SlideSource, mask: np.ndarray, cfg: ExtractionConfig
) -> list[TileRecord]:
    """TileRecords for every grid tile whose mask footprint passes the threshold.

    Tiles are tile_px squares anchored at (0, 0); ragged right/bottom
    remainders are dropped. Records come back sorted by (y, x).
    """
    w, h = slide.dimensions
    if w < cfg.tile_px or h < cfg.tile_px:
        raise ConfigurationError(
            f"slide {slide.slide_id} is {w}x{h}, smaller than one {cfg.tile_px}px tile"
        )
    ds = cfg.mask_downsample
    expected = (-(-h // ds), -(-w // ds))
    if mask.shape != expected:
        raise ConfigurationError(
            f"mask shape {mask.shape} does not match slide dims {(w, h)} at 1/{ds} "
            f"(expected {expected})"
        )
    tissue = mask.astype(np.float64)
    records = []
    for y in range(0, h - cfg.tile_px + 1, cfg.tile_px):
        for x in range(0, w - cfg.tile_px + 1, cfg.tile_px):
            my0, my1 = y // ds, -(-(y + cfg.tile_px) // ds)
            mx0, mx1 = x // ds, -(-(x + cfg.tile_px) // ds)
            fraction = float(tissue[my0:my1, mx0:mx1].mean())
            if fraction >= cfg.tissue_threshold:
                records.append(
                    TileRecord(
                        slide_id=slide.slide_id,
                        tile_id=TileRecord.make_id(slide.slide_id, x, y),
                        x=x,
                        y=y,
                        width=cfg.tile_px,
                        height=cfg.tile_px,
                        tissue_fraction=fraction,
                    )
                )
    return records


def filter_tile(pixels: np.ndarray, cfg: ExtractionConfig) -> tuple[bool, str]:
    """(keep, reason): rejects blank tiles and pen-marked tiles.

    Blank = per-channel variance below the floor on all channels. Pen mark =
    more than half the pixels in a saturated blue/green hue band.
    """
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ContractError(f"expected HxWx3 tile, got shape {pixels.shape}")
    if pixels.shape[0] != cfg.tile_px or pixels.shape[1] != cfg.tile_px:
        raise ContractError(
            f"expected {cfg.tile_px}x{cfg.tile_px} tile, got {pixels.shape[:2]}"
        )
    variances = pixels.reshape(-1, 3).var(axis=0)
    if bool((variances < cfg.blank_variance_floor).all()):
        return False, "blank"
    hsv = rgb2hsv(pixels)
    hue, sat = hsv[..., 0], hsv[..., 1]
    in_band = np.zeros(hue.shape, dtype=bool)
    for lo, hi in PEN_HUE_BANDS:
        in_band |= (hue >= lo) & (hue <= hi)
    pen = in_band & (sat > PEN_SATURATION)
    if float(pen.mean()) > PEN_FRACTION:
        return False, "pen_mark"
    return True, ""


def read_tile(slide: SlideSource, record: TileRecord) -> np.ndarray:
    return slide.reader.read_region(0, record.x, record.y, record.width, record.height)


def _encode_png(pixels: np.ndarray) -> bytes:
    img = Image.fromarray((np.clip(pixels, 0.0, 1.0) * 255.0).round().astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def extract_slide(
    slide: SlideSource,
    cfg: ExtractionConfig,
    out_dir: str | Path,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> list[TileRecord]:
    """Run mask -> grid -> filter -> save for one slide.

    Tile PNGs land in out_dir as "<slide_id>_<x>_<y>.png"; the returned
    records carry relative paths and are sorted by (y, x). Tiles rejected by
    filter_tile are omitted. Safe to parallelize: each worker reads, filters,
    and encodes disjoint tiles, and results merge in grid order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask = compute_tissue_mask(slide, cfg)
    candidates = extract_tile_grid(slide, mask, cfg)

    def process(record: TileRecord) -> tuple[TileRecord, bytes] | None:
        pixels = read_tile(slide, record)
        keep, _ = filter_tile(pixels, cfg)
        if not keep:
            return None
        name = f"{record.slide_id}_{record.x}_{record.y}.png"
        return TileRecord(**{**record.__dict__, "path": name}), _encode_png(pixels)

    results: list[tuple[TileRecord, bytes] | None]
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(process, candidates))
    else:
        results = [process(r) for r in candidates]

    kept = []
    done = 0
    for item in results:
        done += 1
        if progress:
            progress(done, len(candidates))
        if item is None:
            continue
        record, png = item
        (out_dir / record.path).write_bytes(png)
        kept.append(record)
    return kept


MANIFEST_COLUMNS = ("slide_id", "tile_id", "x", "y", "width", "height", "tissue_fraction", "path")


def write_manifest(path: str | Path, records: Iterable[TileRecord]) -> None:
    """Tab-separated manifest, one record per line, '#'-prefixed header."""
    lines = ["#" + "\t".join(MANIFEST_COLUMNS)]
    for r in records:
        lines.append(
            "\t".join(
                [r.slide_id, r.tile_id, str(r.x), str(r.y), str(r.width), str(r.height),
                 f"{r.tissue_fraction:.6f}", r.path]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[TileRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        slide_id, tile_id, x, y, w, h, frac, rel = line.split("\t")
        records.append(
            TileRecord(slide_id, tile_id, int(x), int(y), int(w), int(h), float(frac), rel)
        )
    return records
