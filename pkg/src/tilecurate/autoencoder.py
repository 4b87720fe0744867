"""Convolutional autoencoder whose frozen encoder supplies tile embeddings.

Encoder: six 3x3 convolutions (channels 32, 64, 128, 256, 512, 512; strides
2, 2, 2, 2, 2, 1), each followed by batch normalization and Leaky ReLU
(slope 0.2). A 3x256x256 tile maps to a 512x8x8 feature map, flattened
channel-major into a 32,768-value latent. The decoder mirrors the encoder
with transposed convolutions and a final sigmoid.

Training minimizes 1 - SSIM (or MSE, for loss-function comparisons) with
Adam. Runs are deterministic for a fixed seed on a deterministic compute
backend (CPU, fixed thread count).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import imgqual
from .extract import ConfigurationError
from .features import EmbeddingMatrix
from .imgqual import AugmentationPolicy, ContractError, SsimParams

FINAL_SPATIAL = 8  # the latent feature map is always 8x8


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or inconsistent inputs)."""


@dataclass(frozen=True)
class AeArchitecture:
    tile_px: int = 256
    in_channels: int = 3
    channels: tuple[int, ...] = (32, 64, 128, 256, 512, 512)
    strides: tuple[int, ...] = (2, 2, 2, 2, 2, 1)
    kernel: int = 3
    leaky_slope: float = 0.2

    def __post_init__(self):
        if len(self.channels) != len(self.strides):
            raise ConfigurationError("channels and strides must have equal length")
        total = math.prod(self.strides)
        if self.tile_px % total != 0 or self.tile_px // total != FINAL_SPATIAL:
            raise ConfigurationError(
                f"stride plan {self.strides} maps tile {self.tile_px} to "
                f"{self.tile_px / total:g}x{self.tile_px / total:g}, not "
                f"{FINAL_SPATIAL}x{FINAL_SPATIAL}"
            )

    @property
    def latent_dim(self) -> int:
        return self.channels[-1] * FINAL_SPATIAL * FINAL_SPATIAL

    @property
    def latent_channels(self) -> int:
        return self.channels[-1]


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ssim"
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    augment: AugmentationPolicy | None = None
    target_ssim: float | None = None  # early stop once train-set SSIM reaches it
    max_steps: int | None = None

    def __post_init__(self):
        if self.loss not in ("ssim", "mse"):
            raise ConfigurationError(f"loss must be 'ssim' or 'mse', got {self.loss!r}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")


class ConvAutoencoder(nn.Module):
    def __init__(self, arch: AeArchitecture):
        super().__init__()
        self.arch = arch
        k, pad = arch.kernel, arch.kernel // 2
        enc: list[nn.Module] = []
        prev = arch.in_channels
        for ch, stride in zip(arch.channels, arch.strides):
            enc += [
                nn.Conv2d(prev, ch, k, stride=stride, padding=pad),
                nn.BatchNorm2d(ch),
                nn.LeakyReLU(arch.leaky_slope),
            ]
            prev = ch
        self.encoder = nn.Sequential(*enc)
        dec: list[nn.Module] = []
        rev_channels = (*reversed(arch.channels[:-1]), arch.in_channels)
        rev_strides = tuple(reversed(arch.strides))
        for i, (ch, stride) in enumerate(zip(rev_channels, rev_strides)):
            if stride > 1:
                # even kernel = uniform overlap, no checkerboard artifacts
                dec.append(nn.ConvTranspose2d(prev, ch, 2 * stride, stride=stride, padding=pad))
            else:
                dec.append(nn.ConvTranspose2d(prev, ch, k, stride=1, padding=pad))
            if i < len(rev_channels) - 1:
                dec += [nn.BatchNorm2d(ch), nn.LeakyReLU(arch.leaky_slope)]
            else:
                dec.append(nn.Sigmoid())
            prev = ch
        self.decoder = nn.Sequential(*dec)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


def build_autoencoder(arch: AeArchitecture | None = None, seed: int = 0) -> ConvAutoencoder:
    """Construct the model with deterministic, seed-controlled initialization."""
    arch = arch or AeArchitecture()
    torch.manual_seed(seed)
    return ConvAutoencoder(arch)


# --- differentiable SSIM ----------------------------------------------------

def _gaussian_kernel2d(params: SsimParams, dtype: torch.dtype) -> torch.Tensor:
    taps = imgqual.gaussian_window(params.window, params.sigma)
    k = np.outer(taps, taps)
    return torch.as_tensor(k, dtype=dtype)


def ssim_torch(a: torch.Tensor, b: torch.Tensor, params: SsimParams | None = None) -> torch.Tensor:
    """Differentiable mean SSIM over an NCHW batch (valid Gaussian windows)."""
    params = params or SsimParams()
    if a.shape != b.shape:
        raise ContractError(f"batch shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[-1] < params.window or a.shape[-2] < params.window:
        raise ContractError(f"images {tuple(a.shape[-2:])} smaller than window {params.window}")
    c = a.shape[1]
    kernel = _gaussian_kernel2d(params, a.dtype).to(a.device).expand(c, 1, -1, -1)

    def win(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, kernel, groups=c)

    mu_a, mu_b = win(a), win(b)
    var_a = win(a * a) - mu_a * mu_a
    var_b = win(b * b) - mu_b * mu_b
    cov = win(a * b) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def _to_nchw(tiles: np.ndarray) -> torch.Tensor:
    tiles = np.asarray(tiles, dtype=np.float32)
    if tiles.ndim != 4 or tiles.shape[3] not in (1, 3):
        raise ContractError(f"expected NxHxWxC tiles, got shape {tiles.shape}")
    return torch.from_numpy(np.ascontiguousarray(tiles.transpose(0, 3, 1, 2)))


def _batch_metrics(model: ConvAutoencoder, tiles: torch.Tensor, batch_size: int) -> dict:
    """SSIM/PSNR/MSE of reconstructions over a tile tensor, inference mode."""
    model.eval()
    ssims, sq_errors = [], []
    with torch.no_grad():
        for start in range(0, len(tiles), batch_size):
            batch = tiles[start : start + batch_size]
            recon = model(batch)
            ssims.append(float(ssim_torch(recon, batch)) * len(batch))
            sq_errors.append(float(((recon - batch) ** 2).mean()) * len(batch))
    n = len(tiles)
    mse = sum(sq_errors) / n
    psnr = math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)
    return {"ssim": sum(ssims) / n, "psnr": psnr, "mse": mse}


def train_autoencoder(
    tiles: np.ndarray,
    cfg: TrainConfig,
    arch: AeArchitecture | None = None,
) -> tuple["Checkpoint", list[dict]]:
    """Train on NxHxWxC tiles in [0, 1]; returns the checkpoint and epoch metrics.

    Each epoch shuffles with a (seed, epoch)-keyed generator and, when an
    augmentation policy is set, re-draws per-tile transforms keyed by
    (policy seed, epoch, tile index). History rows carry the mean batch loss
    plus SSIM/PSNR/MSE of the un-augmented training tiles at epoch end.
    """
    arch = arch or AeArchitecture()
    tiles = np.asarray(tiles, dtype=np.float32)
    if tiles.ndim != 4 or tiles.shape[0] < 1:
        raise ContractError(f"expected at least one NxHxWxC tile, got shape {tiles.shape}")
    if tiles.shape[1] != arch.tile_px or tiles.shape[2] != arch.tile_px:
        raise ConfigurationError(
            f"tiles are {tiles.shape[1]}x{tiles.shape[2]}, architecture expects {arch.tile_px}"
        )
    model = build_autoencoder(arch, cfg.seed)
    clean = _to_nchw(tiles)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    history: list[dict] = []
    steps = 0
    stop = False
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed & 0x7FFFFFFF, epoch]).permutation(len(tiles))
        if cfg.augment is not None:
            augmented = np.stack(
                [imgqual.apply_augmentation(tiles[i], cfg.augment, int(i), epoch) for i in order]
            )
            epoch_data = _to_nchw(augmented)
        else:
            epoch_data = clean[order]
        model.train()
        batch_losses = []
        for b, start in enumerate(range(0, len(tiles), cfg.batch_size)):
            batch = epoch_data[start : start + cfg.batch_size]
            optimizer.zero_grad()
            recon = model(batch)
            if cfg.loss == "ssim":
                loss = 1.0 - ssim_torch(recon, batch)
            else:
                loss = F.mse_loss(recon, batch)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss.item()} at epoch {epoch} batch {b}"
                )
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.detach()))
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                stop = True
                break
        metrics = _batch_metrics(model, clean, cfg.batch_size)
        history.append({"epoch": epoch, "loss": float(np.mean(batch_losses)), **metrics})
        if cfg.target_ssim is not None and metrics["ssim"] >= cfg.target_ssim:
            stop = True
        if stop:
            break
    checkpoint = Checkpoint.from_model(model, cfg, history)
    return checkpoint, history


# --- checkpoint archive ------------------------------------------------------

@dataclass
class Checkpoint:
    """Named-tensor archive of the trained model plus training metadata."""

    arch: AeArchitecture
    config: dict
    history: list[dict]
    tensors: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: ConvAutoencoder, cfg: TrainConfig, history: list[dict]) -> "Checkpoint":
        tensors = {
            name: t.detach().cpu().numpy().astype(np.float32, copy=True)
            for name, t in model.state_dict().items()
            if t.is_floating_point()
        }
        cfg_dict = dataclasses.asdict(cfg)
        if cfg.augment is not None:
            cfg_dict["augment"] = dataclasses.asdict(cfg.augment)
        return cls(model.arch, cfg_dict, list(history), tensors)

    def to_model(self) -> ConvAutoencoder:
        model = ConvAutoencoder(self.arch)
        expected = {n for n, t in model.state_dict().items() if t.is_floating_point()}
        missing = expected - set(self.tensors)
        extra = set(self.tensors) - expected
        if missing or extra:
            raise ConfigurationError(
                f"checkpoint does not match architecture: missing={sorted(missing)} "
                f"extra={sorted(extra)}"
            )
        state = {name: torch.from_numpy(arr.copy()) for name, arr in self.tensors.items()}
        result = model.load_state_dict(state, strict=False)
        leftovers = [k for k in result.missing_keys if not k.endswith("num_batches_tracked")]
        if leftovers:
            raise ConfigurationError(f"checkpoint missing tensors: {leftovers}")
        model.eval()
        return model


def save_checkpoint(checkpoint: Checkpoint, directory: str | Path) -> None:
    """index (name/dtype/shape per line) + one raw LE f32 blob per tensor + meta."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index_lines = []
    for name in sorted(checkpoint.tensors):
        arr = checkpoint.tensors[name]
        shape = "x".join(map(str, arr.shape)) if arr.ndim else "scalar"
        index_lines.append(f"{name}\tf32\t{shape}\t{arr.size}")
        (directory / f"{name}.bin").write_bytes(
            np.ascontiguousarray(arr, dtype="<f4").tobytes()
        )
    (directory / "index").write_text("\n".join(index_lines) + "\n", encoding="utf-8")
    meta = {
        "arch": dataclasses.asdict(checkpoint.arch),
        "config": checkpoint.config,
        "history": checkpoint.history,
    }
    (directory / "meta").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def load_checkpoint(directory: str | Path) -> Checkpoint:
    directory = Path(directory)
    meta = json.loads((directory / "meta").read_text(encoding="utf-8"))
    arch_dict = dict(meta["arch"])
    arch_dict["channels"] = tuple(arch_dict["channels"])
    arch_dict["strides"] = tuple(arch_dict["strides"])
    arch = AeArchitecture(**arch_dict)
    tensors: dict[str, np.ndarray] = {}
    for line in (directory / "index").read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        name, dtype, shape_txt, size = line.split("\t")
        if dtype != "f32":
            raise ConfigurationError(f"unsupported checkpoint dtype {dtype}")
        shape = () if shape_txt == "scalar" else tuple(int(v) for v in shape_txt.split("x"))
        raw = (directory / f"{name}.bin").read_bytes()
        arr = np.frombuffer(raw, dtype="<f4")
        if arr.size != int(size):
            raise ConfigurationError(f"tensor {name}: blob has {arr.size} values, index says {size}")
        tensors[name] = arr.reshape(shape).copy()
    return Checkpoint(arch, meta["config"], meta["history"], tensors)


def write_metrics_csv(path: str | Path, history: list[dict]) -> None:
    lines = ["epoch,loss,ssim,psnr,mse"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['loss']:.9g},{row['ssim']:.9g},{row['psnr']:.9g},{row['mse']:.9g}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- inference ---------------------------------------------------------------

def encode_tiles(
    checkpoint: Checkpoint,
    tiles: np.ndarray,
    tile_ids: list[str] | None = None,
    batch_size: int = 32,
) -> EmbeddingMatrix:
    """Latent rows (channel-major flatten of the CxHxW feature map) per tile.

    Runs in inference mode with frozen normalization statistics, so the
    result does not depend on how the tiles are batched.
    """
    tiles = np.asarray(tiles, dtype=np.float32)
    if tiles.shape[1] != checkpoint.arch.tile_px:
        raise ConfigurationError(
            f"tiles are {tiles.shape[1]}px, checkpoint expects {checkpoint.arch.tile_px}px"
        )
    model = checkpoint.to_model()
    data = _to_nchw(tiles)
    rows = []
    with torch.no_grad():
        for start in range(0, len(tiles), batch_size):
            z = model.encode(data[start : start + batch_size])
            rows.append(z.reshape(z.shape[0], -1).numpy())
    return EmbeddingMatrix(np.vstack(rows).astype(np.float32), "latent", tile_ids)


def reconstruct(checkpoint: Checkpoint, tile: np.ndarray) -> tuple[np.ndarray, dict]:
    """Reconstruction of one HxWxC tile plus SSIM/PSNR/MSE against the input."""
    tile = np.asarray(tile, dtype=np.float32)
    model = checkpoint.to_model()
    with torch.no_grad():
        recon = model(_to_nchw(tile[None]))[0].numpy().transpose(1, 2, 0)
    metrics = imgqual.pixel_metrics(tile, recon)
    metrics["ssim"] = imgqual.ssim(tile, recon)
    return recon, metrics
