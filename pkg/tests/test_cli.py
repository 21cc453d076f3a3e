import json

import numpy as np
import pytest
import yaml
from PIL import Image

from detfill.cli import main
from detfill.imaging import load_image, load_mask
from detfill.maskgen import BUCKETS, bucket_of, mask_ratio


def write_rgb(path, seed, size=32):
    rng = np.random.default_rng(seed)
    Image.fromarray(
        rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8), mode="RGB"
    ).save(path)


def write_mask_png(path, size=32, fraction=0.4, seed=0):
    rng = np.random.default_rng(seed)
    m = (rng.random((size, size)) < fraction).astype(np.uint8) * 255
    Image.fromarray(m, mode="L").save(path)


@pytest.fixture
def dataset(tmp_path):
    img_dir = tmp_path / "images"
    mask_dir = tmp_path / "masks"
    img_dir.mkdir()
    mask_dir.mkdir()
    for i in range(4):
        write_rgb(img_dir / f"img_{i}.png", seed=20 + i)
    for i in range(3):
        write_mask_png(mask_dir / f"mask_{i}.png", seed=30 + i)
    return img_dir, mask_dir


def tiny_config(tmp_path, **over):
    cfg = dict(
        mode="det",
        learning_rate=1e-3,
        batch_size=2,
        epochs=1,
        image_size=16,
        base_channels=4,
        num_residual_blocks=1,
        seed=5,
    )
    cfg.update(over)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def run_train(tmp_path, dataset, out_name="run", **cfg_over):
    img_dir, mask_dir = dataset
    cfg_path = tiny_config(tmp_path, **cfg_over)
    out = tmp_path / out_name
    code = main(
        [
            "train",
            "--config", str(cfg_path),
            "--images", str(img_dir),
            "--masks", str(mask_dir),
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


class TestGenmasks:
    def test_layout_and_ratios(self, tmp_path, capsys):
        out = tmp_path / "masks"
        code = main(
            ["genmasks", "--out", str(out), "--count", "2", "--size", "128"]
        )
        assert code == 0
        assert "wrote 12 masks" in capsys.readouterr().out
        summary = json.loads((out / "summary.json").read_text())
        assert sorted(summary) == [f"bucket_{i}" for i in range(6)]
        for bucket in BUCKETS:
            entry = summary[f"bucket_{bucket.index}"]
            assert entry["count"] == 2
            assert entry["bounds"] == [bucket.lower, bucket.upper]
            files = sorted((out / f"bucket_{bucket.index}").glob("*.png"))
            assert len(files) == 2
            # rescan from disk: every written mask still lands in its bucket
            for f in files:
                ratio = mask_ratio(load_mask(f))
                assert bucket_of(ratio) is bucket
                assert ratio in entry["ratios"]

    def test_deterministic(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(
                ["genmasks", "--out", str(out), "--count", "2", "--size", "128"]
            ) == 0
        for f1 in sorted(out1.rglob("*.png")):
            f2 = out2 / f1.relative_to(out1)
            assert f1.read_bytes() == f2.read_bytes()

    def test_seed_changes_masks(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["genmasks", "--out", str(out1), "--count", "1", "--size", "128"])
        main(["genmasks", "--out", str(out2), "--count", "1", "--size", "128", "--seed", "9"])
        files1 = sorted(out1.rglob("*.png"))
        files2 = sorted(out2.rglob("*.png"))
        assert any(
            a.read_bytes() != b.read_bytes() for a, b in zip(files1, files2)
        )


class TestTrain:
    def test_det_smoke(self, tmp_path, dataset, capsys):
        out = run_train(tmp_path, dataset)
        assert "finished at step 2" in capsys.readouterr().out
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["mode"] == "det"
        records = [
            json.loads(line)
            for line in (out / "logs" / "metrics.jsonl").read_text().splitlines()
        ]
        assert [r["step"] for r in records] == [1, 2]
        assert (out / "checkpoints" / "step_000002.ckpt").exists()

    def test_weight_smoke(self, tmp_path, dataset):
        out = run_train(tmp_path, dataset, out_name="wrun", mode="weight")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["mode"] == "weight"

    def test_set_overrides_and_seed_flag(self, tmp_path, dataset):
        img_dir, mask_dir = dataset
        cfg_path = tiny_config(tmp_path)
        out = tmp_path / "orun"
        code = main(
            [
                "train",
                "--config", str(cfg_path),
                "--set", "mode=weight",
                "--set", "loss.lambda_hole=3.0",
                "--seed", "11",
                "--images", str(img_dir),
                "--masks", str(mask_dir),
                "--out", str(out),
            ]
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["mode"] == "weight"
        assert manifest["config"]["loss"]["lambda_hole"] == 3.0
        assert manifest["config"]["seed"] == 11

    def test_unknown_config_key_fails_named(self, tmp_path, dataset, capsys):
        img_dir, mask_dir = dataset
        cfg_path = tmp_path / "bad.yaml"
        cfg_path.write_text("learningrate: 0.001\n")
        code = main(
            [
                "train",
                "--config", str(cfg_path),
                "--images", str(img_dir),
                "--masks", str(mask_dir),
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code != 0
        assert "learningrate" in capsys.readouterr().err

    def test_unknown_mode_fails(self, tmp_path, dataset, capsys):
        img_dir, mask_dir = dataset
        code = main(
            [
                "train",
                "--set", "mode=gan",
                "--images", str(img_dir),
                "--masks", str(mask_dir),
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code != 0
        assert "mode" in capsys.readouterr().err

    def test_non_mapping_config_fails(self, tmp_path, dataset, capsys):
        img_dir, mask_dir = dataset
        cfg_path = tmp_path / "bad.yaml"
        cfg_path.write_text("- just\n- a\n- list\n")
        code = main(
            [
                "train",
                "--config", str(cfg_path),
                "--images", str(img_dir),
                "--masks", str(mask_dir),
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code != 0
        assert "mapping" in capsys.readouterr().err

    def test_empty_image_dir_fails(self, tmp_path, dataset, capsys):
        _, mask_dir = dataset
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(
            [
                "train",
                "--set", "image_size=16",
                "--set", "base_channels=4",
                "--set", "num_residual_blocks=1",
                "--images", str(empty),
                "--masks", str(mask_dir),
                "--out", str(tmp_path / "r"),
            ]
        )
        assert code != 0
        assert "no images" in capsys.readouterr().err


class TestInfer:
    def test_writes_png_deterministically(self, tmp_path, dataset):
        img_dir, mask_dir = dataset
        out = run_train(tmp_path, dataset)
        ckpt = out / "checkpoints" / "step_000002.ckpt"
        for name in ("a.png", "b.png"):
            code = main(
                [
                    "infer",
                    "--checkpoint", str(ckpt),
                    "--image", str(img_dir / "img_0.png"),
                    "--mask", str(mask_dir / "mask_0.png"),
                    "--out", str(tmp_path / name),
                ]
            )
            assert code == 0
        a, b = (tmp_path / "a.png").read_bytes(), (tmp_path / "b.png").read_bytes()
        assert a == b
        arr = np.asarray(Image.open(tmp_path / "a.png"))
        assert arr.shape == (16, 16, 3)

    def test_composite_preserves_valid_pixels(self, tmp_path, dataset):
        img_dir, mask_dir = dataset
        out = run_train(tmp_path, dataset)
        ckpt = out / "checkpoints" / "step_000002.ckpt"
        dest = tmp_path / "comp.png"
        code = main(
            [
                "infer",
                "--checkpoint", str(ckpt),
                "--image", str(img_dir / "img_0.png"),
                "--mask", str(mask_dir / "mask_0.png"),
                "--out", str(dest),
                "--composite",
            ]
        )
        assert code == 0
        # outside the hole the 8-bit output must equal the (resized)
        # 8-bit input exactly: compositing keeps gt there and the
        # round trip float -> rint -> uint8 is lossless on exact /255 values
        produced = np.asarray(Image.open(dest))
        gt = load_image(img_dir / "img_0.png", 16)
        mask = load_mask(mask_dir / "mask_0.png", 16)
        expected = np.rint(gt * 255.0).astype(np.uint8)
        valid = mask < 0.5
        np.testing.assert_array_equal(produced[valid], expected[valid])

    def test_missing_checkpoint_fails(self, tmp_path, dataset, capsys):
        img_dir, mask_dir = dataset
        code = main(
            [
                "infer",
                "--checkpoint", str(tmp_path / "nope.ckpt"),
                "--image", str(img_dir / "img_0.png"),
                "--mask", str(mask_dir / "mask_0.png"),
                "--out", str(tmp_path / "x.png"),
            ]
        )
        assert code != 0
        assert capsys.readouterr().err.startswith("error:")


class TestEvaluate:
    @pytest.fixture
    def bucketed_masks(self, tmp_path):
        out = tmp_path / "bmasks"
        assert main(
            ["genmasks", "--out", str(out), "--count", "2", "--size", "128"]
        ) == 0
        return out

    def test_report_counts_and_out_file(self, tmp_path, dataset, bucketed_masks, capsys):
        run = run_train(tmp_path, dataset)
        ckpt = run / "checkpoints" / "step_000002.ckpt"
        img_dir, _ = dataset
        report_path = tmp_path / "report.json"
        capsys.readouterr()  # drop the training chatter
        code = main(
            [
                "evaluate",
                "--checkpoint", str(ckpt),
                "--images", str(img_dir),
                "--masks", str(bucketed_masks),
                "--out", str(report_path),
            ]
        )
        assert code == 0
        printed = json.loads(capsys.readouterr().out)
        on_disk = json.loads(report_path.read_text())
        assert printed == on_disk
        assert sorted(on_disk["per_bucket"]) == [str(i) for i in range(6)]
        for entry in on_disk["per_bucket"].values():
            assert entry["count"] == 2
            assert entry["fid"] is None
        assert on_disk["overall"]["count"] == 12

    def test_fid_needs_extractor(self, tmp_path, capsys):
        # flag validation precedes any filesystem access
        code = main(
            [
                "evaluate",
                "--checkpoint", str(tmp_path / "whatever.ckpt"),
                "--images", str(tmp_path),
                "--masks", str(tmp_path),
                "--fid",
            ]
        )
        assert code != 0
        assert "--extractor" in capsys.readouterr().err

    def test_fid_with_bundled_extractor(self, tmp_path, dataset, bucketed_masks, capsys):
        run = run_train(tmp_path, dataset)
        ckpt = run / "checkpoints" / "step_000002.ckpt"
        img_dir, _ = dataset
        capsys.readouterr()  # drop the training chatter
        code = main(
            [
                "evaluate",
                "--checkpoint", str(ckpt),
                "--images", str(img_dir),
                "--masks", str(bucketed_masks),
                "--fid",
                "--extractor", "bundled",
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert all(
            np.isfinite(entry["fid"]) for entry in report["per_bucket"].values()
        )
        assert np.isfinite(report["overall"]["fid"])


class TestVisualize:
    def test_writes_maps(self, tmp_path, dataset, capsys):
        img_dir, mask_dir = dataset
        run = run_train(tmp_path, dataset)
        ckpt = run / "checkpoints" / "step_000002.ckpt"
        out = tmp_path / "viz"
        code = main(
            [
                "visualize",
                "--checkpoint", str(ckpt),
                "--image", str(img_dir / "img_0.png"),
                "--mask", str(mask_dir / "mask_0.png"),
                "--out", str(out),
            ]
        )
        assert code == 0
        for name in ("valuation_out.png", "valuation_gt.png", "panel.png", "prediction.png"):
            assert (out / name).exists()
        panel = np.asarray(Image.open(out / "panel.png"))
        assert panel.shape == (16, 32, 3)  # two maps side by side

    def test_rejects_weight_mode_checkpoint(self, tmp_path, dataset, capsys):
        img_dir, mask_dir = dataset
        run = run_train(tmp_path, dataset, out_name="wrun", mode="weight")
        ckpt = run / "checkpoints" / "step_000002.ckpt"
        code = main(
            [
                "visualize",
                "--checkpoint", str(ckpt),
                "--image", str(img_dir / "img_0.png"),
                "--mask", str(mask_dir / "mask_0.png"),
                "--out", str(tmp_path / "viz"),
            ]
        )
        assert code != 0
        assert "det-mode" in capsys.readouterr().err
