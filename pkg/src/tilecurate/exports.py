"""Verification-support exporters: QuPath GeoJSON, tissue maps, tile-grid eval."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .curation import ClassRegistry
from .extract import TileRecord
from .imgqual import ContractError


def export_qupath_geojson(
    tiles: list[tuple[TileRecord, str]], registry: ClassRegistry | None = None
) -> dict:
    """GeoJSON FeatureCollection of labeled tiles for one slide.

    Each tile becomes a Feature whose Polygon ring walks the level-0 pixel
    corners clockwise from the top-left and closes on the start; the class
    name travels in properties.classification.name. Feature order preserves
    input order.
    """
    registry = registry or ClassRegistry()
    slide_ids = {record.slide_id for record, _ in tiles}
    if len(slide_ids) > 1:
        raise ContractError(f"tiles span multiple slides: {sorted(slide_ids)}")
    features = []
    for record, tissue in tiles:
        x0, y0 = int(record.x), int(record.y)
        x1, y1 = x0 + int(record.width), y0 + int(record.height)
        ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "objectType": "annotation",
                    "classification": {"name": tissue, "color": list(registry.color(tissue))},
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_geojson(path: str | Path, document: dict) -> None:
    Path(path).write_text(json.dumps(document, indent=1), encoding="utf-8")


def parse_qupath_geojson(document: dict) -> list[tuple[int, int, int, int, str]]:
    """(x, y, width, height, class) per feature, inverse of the exporter."""
    out = []
    for feature in document["features"]:
        ring = feature["geometry"]["coordinates"][0]
        xs = [p[0] for p in ring]
        ys = [p[1] for p in ring]
        name = feature["properties"]["classification"]["name"]
        out.append((min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys), name))
    return out


def render_tissue_map(
    slide_dims: tuple[int, int],
    labeled_tiles: list[tuple[TileRecord, str]],
    registry: ClassRegistry | None = None,
    scale: int = 16,
    tile_px: int = 256,
    background: tuple[int, int, int] = (255, 255, 255),
) -> np.ndarray:
    """Downscaled class-color overview image of labeled tiles.

    Every labeled tile paints a solid (tile_px/scale)-square block in its
    class color; unregistered classes paint black; unlabeled cells keep the
    background color.
    """
    registry = registry or ClassRegistry()
    if scale <= 0 or tile_px % scale != 0:
        raise ContractError(f"scale {scale} must divide tile_px {tile_px}")
    width, height = slide_dims
    out_h, out_w = height // scale, width // scale
    image = np.empty((out_h, out_w, 3), dtype=np.uint8)
    image[:] = background
    block = tile_px // scale
    for record, tissue in labeled_tiles:
        if record.x < 0 or record.y < 0 or record.x + record.width > width or record.y + record.height > height:
            raise ContractError(
                f"tile {record.tile_id} at ({record.x},{record.y}) outside slide {slide_dims}"
            )
        by, bx = record.y // scale, record.x // scale
        image[by : by + block, bx : bx + block] = registry.color(tissue)
    return image


def write_tissue_map(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(image).save(path, format="PNG")


def eval_tile_segmentation(
    pred_grid: np.ndarray,
    gt_mask: np.ndarray,
    positive_class,
    tile_px: int = 256,
    coverage_threshold: float = 0.5,
) -> dict:
    """Tile-granularity IoU/Dice of a class-prediction grid against a pixel mask.

    A grid cell is ground-truth positive when the mask covers at least
    coverage_threshold of its footprint; predicted positive when the grid
    holds positive_class. Empty unions score 1.0 by convention.
    """
    pred_grid = np.asarray(pred_grid)
    gt_mask = np.asarray(gt_mask).astype(bool)
    gh, gw = pred_grid.shape
    if gt_mask.shape != (gh * tile_px, gw * tile_px):
        raise ContractError(
            f"mask shape {gt_mask.shape} does not equal grid {pred_grid.shape} x tile {tile_px}"
        )
    coverage = gt_mask.reshape(gh, tile_px, gw, tile_px).mean(axis=(1, 3))
    gt_positive = coverage >= coverage_threshold
    predicted = pred_grid == positive_class
    tp = int((predicted & gt_positive).sum())
    fp = int((predicted & ~gt_positive).sum())
    fn = int((~predicted & gt_positive).sum())
    iou = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    dice = 1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
    return {"iou": iou, "dice": dice, "tp": tp, "fp": fp, "fn": fn}
