"""End-to-end CLI behavior: pipelines, determinism, exit codes."""

import numpy as np
import pytest

import specklelab as sl
from specklelab.cli import main
from specklelab.images import read_image, write_image
from specklelab.metrics import report_from_text


@pytest.fixture()
def corpus_dir(tmp_path, corpus):
    d = tmp_path / "corpus"
    d.mkdir()
    for i, img in enumerate(corpus[:4]):
        write_image(d / f"scene_{i}.pgm", img, "pgm16")
    return d


def make_datasets(tmp_path, corpus_dir, count=48, val=24, patch=17):
    train = tmp_path / "train.dat"
    valp = tmp_path / "val.dat"
    assert main(["dataset", str(corpus_dir), "--count", str(count),
                 "--patch-size", str(patch), "--looks", "1", "--seed", "3",
                 "--output", str(train)]) == 0
    assert main(["dataset", str(corpus_dir), "--count", str(val),
                 "--patch-size", str(patch), "--looks", "1", "--seed", "4",
                 "--output", str(valp)]) == 0
    return train, valp


TRAIN_FLAGS = ["--layers", "3", "--features", "4", "--batch-size", "16",
               "--eta", "1e-4", "--val-every", "2", "--seed", "5"]


class TestSimulate:
    def test_writes_outputs_and_statistics(self, tmp_path, corpus, capsys):
        src = tmp_path / "clean.img"
        write_image(src, corpus[0], "f32raw")
        noisy, speckle = tmp_path / "noisy.img", tmp_path / "speckle.img"
        code = main(["simulate", str(src), "--looks", "4", "--seed", "1",
                     "--output-noisy", str(noisy), "--output-speckle", str(speckle)])
        assert code == 0
        out = capsys.readouterr().out
        stats = report_from_text(out)
        assert abs(stats["speckle_mean"] - 1.0) < 0.01
        assert abs(stats["speckle_variance"] - 0.25) < 0.01
        field = read_image(speckle)
        product = corpus[0] * field
        np.testing.assert_allclose(read_image(noisy), product, atol=1e-5)

    def test_single_look_variance_near_one(self, tmp_path, corpus, capsys):
        src = tmp_path / "clean.img"
        write_image(src, corpus[1], "f32raw")
        main(["simulate", str(src), "--looks", "1", "--seed", "2",
              "--output-noisy", str(tmp_path / "n.img"),
              "--output-speckle", str(tmp_path / "s.img")])
        stats = report_from_text(capsys.readouterr().out)
        assert abs(stats["speckle_variance"] - 1.0) < 0.05

    def test_same_seed_byte_identical(self, tmp_path, corpus):
        src = tmp_path / "clean.img"
        write_image(src, corpus[0], "f32raw")
        outs = []
        for tag in ("a", "b"):
            n, s = tmp_path / f"n{tag}.img", tmp_path / f"s{tag}.img"
            main(["simulate", str(src), "--looks", "2", "--seed", "9",
                  "--output-noisy", str(n), "--output-speckle", str(s)])
            outs.append((n.read_bytes(), s.read_bytes()))
        assert outs[0] == outs[1]

    def test_unreadable_input_exits_two(self, tmp_path):
        code = main(["simulate", str(tmp_path / "missing.img"),
                     "--output-noisy", str(tmp_path / "n.img"),
                     "--output-speckle", str(tmp_path / "s.img")])
        assert code == 2


class TestDataset:
    def test_build_and_reload(self, tmp_path, corpus_dir, capsys):
        out = tmp_path / "d.dat"
        code = main(["dataset", str(corpus_dir), "--count", "30",
                     "--patch-size", "17", "--seed", "1", "--output", str(out)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "patches = 30" in printed
        assert "source_0" in printed
        ds = sl.load_dataset(out)
        assert len(ds) == 30 and ds.patch_size == 17

    def test_single_image_with_replacement(self, tmp_path, corpus):
        d = tmp_path / "one"
        d.mkdir()
        write_image(d / "only.pgm", corpus[0], "pgm16")
        code = main(["dataset", str(d), "--count", "100", "--patch-size", "33",
                     "--output", str(tmp_path / "d.dat")])
        assert code == 0

    def test_empty_corpus_exits_nonzero(self, tmp_path):
        d = tmp_path / "empty"
        d.mkdir()
        code = main(["dataset", str(d), "--count", "5", "--output", str(tmp_path / "d.dat")])
        assert code == 1


class TestTrain:
    def test_end_to_end_and_determinism(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        ckpts = []
        for tag in ("a", "b"):
            ckpt, log = tmp_path / f"{tag}.ckpt", tmp_path / f"{tag}.log"
            code = main(["train", "--dataset", str(train), "--val", str(val),
                         "--checkpoint-out", str(ckpt), "--log-out", str(log),
                         "--epochs", "1", *TRAIN_FLAGS])
            assert code == 0
            assert log.read_text().strip()
            ckpts.append(ckpt.read_bytes())
        assert ckpts[0] == ckpts[1]

    def test_zero_epochs_equals_initialization(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        ckpt = tmp_path / "init.ckpt"
        code = main(["train", "--dataset", str(train), "--val", str(val),
                     "--checkpoint-out", str(ckpt), "--log-out", str(tmp_path / "l.log"),
                     "--epochs", "0", *TRAIN_FLAGS])
        assert code == 0
        reference = tmp_path / "ref.ckpt"
        params = sl.build_network(sl.make_architecture(3, 4), sl.Rng(5))
        sl.save_checkpoint(params, None, reference)
        assert ckpt.read_bytes() == reference.read_bytes()

    def test_history_log_layout(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        log = tmp_path / "t.log"
        main(["train", "--dataset", str(train), "--val", str(val),
              "--checkpoint-out", str(tmp_path / "t.ckpt"), "--log-out", str(log),
              "--epochs", "1", *TRAIN_FLAGS])
        lines = log.read_text().strip().splitlines()
        assert len(lines) >= 2
        for line in lines:
            fields = line.split()
            assert len(fields) == 7
            float(fields[1])  # parses

    def test_config_file_with_flag_override(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        cfgfile = tmp_path / "train.cfg"
        cfgfile.write_text(
            "# toy config\nepochs = 1\nlayers = 3\nfeatures = 4\n"
            "batch_size = 16\neta = 1e-4\nseed = 5\nval_every = 2\n"
        )
        ckpt_a = tmp_path / "a.ckpt"
        code = main(["train", "--dataset", str(train), "--val", str(val),
                     "--config", str(cfgfile),
                     "--checkpoint-out", str(ckpt_a), "--log-out", str(tmp_path / "a.log")])
        assert code == 0
        # flag overrides file: epochs 0 beats the file's 1
        ckpt_b = tmp_path / "b.ckpt"
        code = main(["train", "--dataset", str(train), "--val", str(val),
                     "--config", str(cfgfile), "--epochs", "0",
                     "--checkpoint-out", str(ckpt_b), "--log-out", str(tmp_path / "b.log")])
        assert code == 0
        assert ckpt_a.read_bytes() != ckpt_b.read_bytes()

    def test_unknown_config_key_exits_one(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        cfgfile = tmp_path / "bad.cfg"
        cfgfile.write_text("epochs = 1\nmystery_knob = 3\n")
        code = main(["train", "--dataset", str(train), "--val", str(val),
                     "--config", str(cfgfile),
                     "--checkpoint-out", str(tmp_path / "x.ckpt"),
                     "--log-out", str(tmp_path / "x.log")])
        assert code == 1

    def test_missing_epochs_exits_one(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        code = main(["train", "--dataset", str(train), "--val", str(val),
                     "--checkpoint-out", str(tmp_path / "x.ckpt"),
                     "--log-out", str(tmp_path / "x.log")])
        assert code == 1

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nan_abort_exits_three_with_suffix(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        ckpt = tmp_path / "boom.ckpt"
        code = main(["train", "--dataset", str(train), "--val", str(val),
                     "--checkpoint-out", str(ckpt), "--log-out", str(tmp_path / "boom.log"),
                     "--epochs", "4", "--eta", "1e25", "--layers", "3",
                     "--features", "4", "--batch-size", "16", "--val-every", "1"])
        assert code == 3
        assert not ckpt.exists()
        assert (tmp_path / "boom.ckpt.aborted").exists()

    def test_resume_from_checkpoint(self, tmp_path, corpus_dir):
        train, val = make_datasets(tmp_path, corpus_dir)
        first = tmp_path / "first.ckpt"
        main(["train", "--dataset", str(train), "--val", str(val),
              "--checkpoint-out", str(first), "--log-out", str(tmp_path / "f.log"),
              "--epochs", "1", *TRAIN_FLAGS])
        second = tmp_path / "second.ckpt"
        code = main(["train", "--dataset", str(train), "--val", str(val),
                     "--resume", str(first),
                     "--checkpoint-out", str(second), "--log-out", str(tmp_path / "s.log"),
                     "--epochs", "1", *TRAIN_FLAGS])
        assert code == 0
        assert second.read_bytes() != first.read_bytes()


class TestDespeckle:
    @pytest.fixture()
    def zero_ckpt(self, tmp_path):
        params = sl.build_network(sl.make_architecture(3, 4), sl.Rng(0))
        for lp in params.layers:
            lp.kernels = np.zeros_like(lp.kernels)
        path = tmp_path / "zero.ckpt"
        sl.save_checkpoint(params, None, path)
        return path

    def test_zero_checkpoint_gives_zero_image(self, tmp_path, corpus, zero_ckpt):
        src = tmp_path / "in.img"
        write_image(src, corpus[0], "f32raw")
        out = tmp_path / "out.img"
        code = main(["despeckle", "--checkpoint", str(zero_ckpt),
                     "--input", str(src), "--output", str(out)])
        assert code == 0
        assert not read_image(out).any()

    def test_output_dims_match_input_under_tiling(self, tmp_path, corpus, zero_ckpt):
        src = tmp_path / "in.img"
        write_image(src, corpus[0], "f32raw")  # 128x128, tile 48 forces tiling
        out = tmp_path / "out.img"
        code = main(["despeckle", "--checkpoint", str(zero_ckpt),
                     "--input", str(src), "--output", str(out),
                     "--tile", "48", "--overlap", "12"])
        assert code == 0
        assert read_image(out).shape == corpus[0].shape

    def test_ratio_output_and_mean(self, tmp_path, corpus, zero_ckpt, capsys):
        src = tmp_path / "in.img"
        write_image(src, corpus[0], "f32raw")
        ratio = tmp_path / "ratio.img"
        code = main(["despeckle", "--checkpoint", str(zero_ckpt),
                     "--input", str(src), "--output", str(tmp_path / "o.img"),
                     "--ratio-output", str(ratio)])
        assert code == 0
        assert "ratio_mean" in capsys.readouterr().out
        assert read_image(ratio).shape == corpus[0].shape

    def test_corrupt_checkpoint_exits_two(self, tmp_path, corpus):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTRIGHT" + b"\x00" * 64)
        src = tmp_path / "in.img"
        write_image(src, corpus[0], "f32raw")
        code = main(["despeckle", "--checkpoint", str(bad),
                     "--input", str(src), "--output", str(tmp_path / "o.img")])
        assert code == 2


class TestEvaluate:
    @pytest.fixture()
    def simulated(self, tmp_path):
        rng = sl.Rng(55)
        clean = np.clip(sl.synthetic_clean_image(160, 160, rng), 0.05, 1.0)
        noisy = sl.corrupt(clean, sl.sample_speckle(160, 160, 4.0, rng))
        paths = {}
        for name, img in (("clean", clean), ("noisy", noisy)):
            p = tmp_path / f"{name}.img"
            write_image(p, img, "f32raw")
            paths[name] = p
        return paths

    def test_ideal_filter_report(self, tmp_path, simulated, capsys):
        report = tmp_path / "r.txt"
        code = main(["evaluate", "--noisy", str(simulated["noisy"]),
                     "--filtered", str(simulated["clean"]),
                     "--clean", str(simulated["clean"]),
                     "--looks", "4", "--report-out", str(report)])
        assert code == 0
        parsed = report_from_text(report.read_text())
        assert parsed["m_index"] < 5.0
        assert parsed["psnr"] > 100 or parsed["psnr"] == float("inf")
        assert "m_index" in capsys.readouterr().out

    def test_identity_filter_scores_worse(self, tmp_path, simulated):
        r1, r2 = tmp_path / "ideal.txt", tmp_path / "identity.txt"
        main(["evaluate", "--noisy", str(simulated["noisy"]),
              "--filtered", str(simulated["clean"]), "--clean", str(simulated["clean"]),
              "--looks", "4", "--report-out", str(r1)])
        main(["evaluate", "--noisy", str(simulated["noisy"]),
              "--filtered", str(simulated["noisy"]), "--clean", str(simulated["clean"]),
              "--looks", "4", "--report-out", str(r2)])
        ideal = report_from_text(r1.read_text())["m_index"]
        identity = report_from_text(r2.read_text())["m_index"]
        assert ideal < identity

    def test_explicit_mask_image(self, tmp_path, simulated):
        clean = read_image(simulated["clean"])
        masks = sl.homogeneous_masks_from_clean(clean)
        label = np.zeros(clean.shape)
        for i, m in enumerate(masks[:3], start=1):
            label[m] = i
        mask_path = tmp_path / "masks.img"
        write_image(mask_path, label, "f32raw")
        report = tmp_path / "r.txt"
        code = main(["evaluate", "--noisy", str(simulated["noisy"]),
                     "--filtered", str(simulated["clean"]),
                     "--masks", str(mask_path),
                     "--looks", "4", "--report-out", str(report)])
        assert code == 0
        parsed = report_from_text(report.read_text())
        assert "psnr" not in parsed  # no clean supplied

    def test_no_masks_no_clean_exits_one(self, tmp_path, simulated):
        code = main(["evaluate", "--noisy", str(simulated["noisy"]),
                     "--filtered", str(simulated["noisy"]),
                     "--looks", "4", "--report-out", str(tmp_path / "r.txt")])
        assert code == 1


class TestUsage:
    @pytest.mark.parametrize("cmd", ["simulate", "dataset", "train", "despeckle", "evaluate"])
    def test_help_exits_zero(self, cmd):
        with pytest.raises(SystemExit) as excinfo:
            main([cmd, "--help"])
        assert excinfo.value.code == 0

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["simulate", "--bogus"])
        assert excinfo.value.code == 1

    def test_missing_command_exits_one(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 1
