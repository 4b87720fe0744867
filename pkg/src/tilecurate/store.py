"""Binary containers for embeddings and fitted models.

Embedding store layout (little-endian throughout):
    magic "DCPP" | u32 version | u32 rows | u32 dim | u8 stage code | f32 payload

Named-section container (PCA models etc.) shares the magic/version prefix:
    magic "DCPP" | u32 version | u32 section count |
    per section: u16 name length | utf-8 name | u8 ndim | u32 dims... | f32 data

Tile ids travel in a sidecar text file with one id per line, same order as
the matrix rows.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .features import STAGES, STAGE_CODES, EmbeddingMatrix, PcaModel

MAGIC = b"DCPP"
VERSION = 1


class StoreFormatError(RuntimeError):
    """The file is not a valid container or is truncated/corrupt."""


def _ids_path(path: Path) -> Path:
    return path.with_name(path.name + ".ids")


def write_embeddings(path: str | Path, em: EmbeddingMatrix) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(em.data, dtype="<f4")
    header = MAGIC + struct.pack("<III B", VERSION, em.rows, em.dim, STAGE_CODES[em.stage])
    path.write_bytes(header + payload.tobytes())
    if em.tile_ids is not None:
        _ids_path(path).write_text("\n".join(em.tile_ids) + "\n", encoding="utf-8")


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise StoreFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, rows, dim, stage_code = struct.unpack_from("<III B", raw, 4)
    if version != VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    if stage_code >= len(STAGES):
        raise StoreFormatError(f"{path}: unknown stage code {stage_code}")
    offset = 4 + struct.calcsize("<III B")
    expected = rows * dim * 4
    if len(raw) - offset != expected:
        raise StoreFormatError(
            f"{path}: payload is {len(raw) - offset} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=offset).reshape(rows, dim)
    ids_file = _ids_path(path)
    tile_ids = None
    if ids_file.exists():
        tile_ids = ids_file.read_text(encoding="utf-8").splitlines()
    return EmbeddingMatrix(data.copy(), STAGES[stage_code], tile_ids)


def write_sections(path: str | Path, sections: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, array in sections.items():
        arr = np.ascontiguousarray(array, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_sections(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise StoreFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version}")
    offset = 12
    sections: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
            offset += size * 4
            sections[name] = data.reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise StoreFormatError(f"{path}: truncated container: {exc}") from exc
    if offset != len(raw):
        raise StoreFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return sections


def write_pca_model(path: str | Path, model: PcaModel) -> None:
    write_sections(
        path,
        {
            "mean": model.mean,
            "components": model.components,
            "variances": model.explained_variance,
            "n_samples": np.array([model.n_samples], dtype=np.float32),
        },
    )


def read_pca_model(path: str | Path) -> PcaModel:
    sections = read_sections(path)
    try:
        return PcaModel(
            mean=sections["mean"].astype(np.float64),
            components=sections["components"].astype(np.float64),
            explained_variance=sections["variances"].astype(np.float64),
            n_samples=int(sections["n_samples"][0]),
        )
    except KeyError as exc:
        raise StoreFormatError(f"{path}: missing section {exc}") from exc
