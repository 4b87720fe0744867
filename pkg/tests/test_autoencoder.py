import numpy as np
import pytest
import torch

from tilecurate import imgqual
from tilecurate.autoencoder import (
    AeArchitecture,
    Checkpoint,
    ConvAutoencoder,
    TrainConfig,
    TrainingError,
    build_autoencoder,
    encode_tiles,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
    ssim_torch,
    train_autoencoder,
    write_metrics_csv,
)
from tilecurate.extract import ConfigurationError

MINI = AeArchitecture(tile_px=16, channels=(8, 8), strides=(2, 1))


def tiny_tiles(n=4, seed=0, size=256):
    rng = np.random.default_rng(seed)
    base = rng.random((n, 8, 8, 3)).astype(np.float32)
    tiles = np.stack(
        [np.kron(b, np.ones((size // 8, size // 8, 1), np.float32)) for b in base]
    )
    return np.clip(tiles, 0.02, 0.98)


class TestArchitecture:
    def test_probe_latent_is_32768(self):
        model = build_autoencoder(seed=0)
        z = model.encode(torch.rand(1, 3, 256, 256))
        assert z.reshape(1, -1).shape[1] == 32_768
        assert AeArchitecture().latent_dim == 32_768

    def test_reconstruction_shape_and_sigmoid_range(self):
        model = build_autoencoder(seed=0)
        y = model(torch.rand(2, 3, 256, 256))
        assert y.shape == (2, 3, 256, 256)
        assert 0.0 < float(y.min()) and float(y.max()) < 1.0

    def test_same_seed_identical_parameters(self):
        a = build_autoencoder(seed=7)
        b = build_autoencoder(seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_bad_spatial_plan_rejected(self):
        with pytest.raises(ConfigurationError):
            AeArchitecture(tile_px=64)
        with pytest.raises(ConfigurationError):
            AeArchitecture(channels=(8, 8), strides=(2, 2))


class TestSsimTorch:
    def test_matches_numpy_ssim(self, rng):
        for _ in range(5):
            a = rng.random((2, 3, 32, 32)).astype(np.float64)
            b = rng.random((2, 3, 32, 32)).astype(np.float64)
            got = float(ssim_torch(torch.from_numpy(a), torch.from_numpy(b)))
            expected = np.mean(
                [imgqual.ssim(a[i].transpose(1, 2, 0), b[i].transpose(1, 2, 0)) for i in range(2)]
            )
            assert got == pytest.approx(expected, abs=1e-9)

    def test_identity(self):
        x = torch.rand(1, 3, 24, 24, dtype=torch.float64)
        assert float(ssim_torch(x, x)) == pytest.approx(1.0, abs=1e-12)


class TestGradients:
    def test_ssim_loss_gradcheck_against_finite_differences(self):
        torch.manual_seed(0)
        model = build_autoencoder(MINI, seed=3).double()
        model.train()
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64)

        def loss_value():
            return 1.0 - ssim_torch(model(x), x)

        loss = loss_value()
        loss.backward()
        gen = np.random.default_rng(1)
        checked = 0
        h = 1e-6
        for name, param in model.named_parameters():
            flat = param.detach().reshape(-1)
            grad = param.grad.reshape(-1)
            for idx in gen.choice(len(flat), size=min(3, len(flat)), replace=False):
                original = float(flat[idx])
                with torch.no_grad():
                    flat[idx] = original + h
                    up = float(loss_value())
                    flat[idx] = original - h
                    down = float(loss_value())
                    flat[idx] = original
                numeric = (up - down) / (2 * h)
                analytic = float(grad[idx])
                scale = max(abs(numeric), abs(analytic), 1e-6)
                assert abs(numeric - analytic) / scale <= 1e-3, (
                    f"{name}[{idx}]: analytic {analytic} vs numeric {numeric}"
                )
                checked += 1
        assert checked >= 20


class TestTraining:
    def test_history_rows_and_csv(self, tmp_path):
        tiles = tiny_tiles(4)
        cfg = TrainConfig(epochs=2, batch_size=4, seed=1, learning_rate=1e-3)
        checkpoint, history = train_autoencoder(tiles, cfg)
        assert len(history) == 2
        assert set(history[0]) == {"epoch", "loss", "ssim", "psnr", "mse"}
        write_metrics_csv(tmp_path / "metrics.csv", history)
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,ssim,psnr,mse"
        assert len(lines) == 3

    def test_identical_seed_identical_first_epoch_loss(self):
        tiles = tiny_tiles(4)
        cfg = TrainConfig(epochs=1, batch_size=2, seed=5)
        _, h1 = train_autoencoder(tiles, cfg)
        _, h2 = train_autoencoder(tiles, cfg)
        assert h1[0]["loss"] == h2[0]["loss"]
        assert h1[0]["ssim"] == h2[0]["ssim"]

    def test_augmentation_redrawn_per_epoch_trains(self):
        tiles = tiny_tiles(2)
        policy = imgqual.AugmentationPolicy(seed=3, blur_sigma_max=0.0)
        cfg = TrainConfig(epochs=2, batch_size=2, seed=2, augment=policy)
        _, history = train_autoencoder(tiles, cfg)
        assert len(history) == 2

    def test_non_finite_loss_aborts_with_batch_index(self):
        tiles = tiny_tiles(2)
        tiles[1, 0, 0, 0] = np.nan  # poisoned batch must be named in the abort
        cfg = TrainConfig(loss="mse", epochs=1, batch_size=1, seed=0)
        with pytest.raises(TrainingError, match="batch"):
            train_autoencoder(tiles, cfg)

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(loss="l1")
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=0.0)

    def test_max_steps_stops_early(self):
        tiles = tiny_tiles(4)
        cfg = TrainConfig(epochs=10, batch_size=2, seed=0, max_steps=3)
        _, history = train_autoencoder(tiles, cfg)
        assert len(history) == 2  # 2 steps in epoch 0, stop during epoch 1


class TestEncodeReconstruct:
    @pytest.fixture(scope="class")
    def checkpoint(self):
        cfg = TrainConfig(epochs=1, batch_size=4, seed=4)
        ckpt, _ = train_autoencoder(tiny_tiles(4), cfg)
        return ckpt

    def test_shapes_and_repeatability(self, checkpoint):
        tiles = tiny_tiles(3, seed=9)
        em = encode_tiles(checkpoint, tiles, [f"t{i}" for i in range(3)])
        assert em.data.shape == (3, 32_768)
        again = encode_tiles(checkpoint, tiles)
        np.testing.assert_array_equal(em.data, again.data)

    def test_batch_partition_invariance(self, checkpoint):
        tiles = tiny_tiles(5, seed=8)
        whole = encode_tiles(checkpoint, tiles, batch_size=5)
        single = encode_tiles(checkpoint, tiles, batch_size=1)
        np.testing.assert_allclose(whole.data, single.data, atol=1e-6)

    def test_latent_layout_is_channel_major(self, checkpoint):
        tiles = tiny_tiles(1, seed=2)
        em = encode_tiles(checkpoint, tiles)
        model = checkpoint.to_model()
        with torch.no_grad():
            fmap = model.encode(
                torch.from_numpy(np.ascontiguousarray(tiles.transpose(0, 3, 1, 2)))
            )
        # row = C-order flatten of the CxHxW map (channel-major, 512 x 64)
        np.testing.assert_allclose(em.data[0], fmap[0].numpy().reshape(-1), atol=1e-6)

    def test_reconstruct_matches_imgqual_metrics(self, checkpoint):
        tile = tiny_tiles(1, seed=3)[0]
        recon, metrics = reconstruct(checkpoint, tile)
        assert recon.shape == tile.shape
        assert 0.0 < recon.min() and recon.max() < 1.0
        expected = imgqual.pixel_metrics(tile, recon)
        assert metrics["mse"] == expected["mse"]
        assert metrics["psnr"] == expected["psnr"]
        assert metrics["ssim"] == imgqual.ssim(tile, recon)

    def test_shape_mismatch_rejected(self, checkpoint):
        with pytest.raises(ConfigurationError):
            encode_tiles(checkpoint, np.zeros((1, 64, 64, 3), np.float32))


class TestCheckpoint:
    def test_roundtrip_bit_identical_embeddings(self, tmp_path):
        cfg = TrainConfig(epochs=1, batch_size=2, seed=11)
        checkpoint, _ = train_autoencoder(tiny_tiles(2), cfg)
        save_checkpoint(checkpoint, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        tiles = tiny_tiles(2, seed=4)
        np.testing.assert_array_equal(
            encode_tiles(checkpoint, tiles).data, encode_tiles(loaded, tiles).data
        )

    def test_save_load_save_identical_bytes(self, tmp_path):
        cfg = TrainConfig(epochs=1, batch_size=2, seed=12)
        checkpoint, _ = train_autoencoder(tiny_tiles(2), cfg)
        save_checkpoint(checkpoint, tmp_path / "a")
        save_checkpoint(load_checkpoint(tmp_path / "a"), tmp_path / "b")
        files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_architecture_mismatch_rejected(self, tmp_path):
        cfg = TrainConfig(epochs=1, batch_size=2, seed=1)
        checkpoint, _ = train_autoencoder(
            tiny_tiles(2, size=16), cfg, MINI
        )
        tampered = Checkpoint(AeArchitecture(), checkpoint.config, [], checkpoint.tensors)
        with pytest.raises(ConfigurationError, match="architecture"):
            tampered.to_model()

    def test_index_lists_every_parameter_once(self, tmp_path):
        cfg = TrainConfig(epochs=1, batch_size=2, seed=2)
        checkpoint, _ = train_autoencoder(tiny_tiles(2, size=16), cfg, MINI)
        save_checkpoint(checkpoint, tmp_path / "c")
        names = [line.split("\t")[0] for line in (tmp_path / "c" / "index").read_text().splitlines()]
        assert len(names) == len(set(names))
        model_params = {n for n, t in ConvAutoencoder(MINI).state_dict().items() if t.is_floating_point()}
        assert set(names) == model_params
