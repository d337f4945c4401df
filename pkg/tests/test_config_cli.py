import csv
import os

import numpy as np
import pytest

from dynshuffle.cli import main
from dynshuffle.config import parse_config
from dynshuffle.errors import ConfigurationError
from dynshuffle.permutation import load_matrix_csv


class TestConfigParsing:
    def test_defaults_and_types(self):
        cfg = parse_config("")
        assert cfg["model.arch"] == "v1"
        assert cfg["trainer.lambda"] == 0.5
        assert cfg["model.widths"] == (24, 48, 96)

    def test_values_parsed(self):
        cfg = parse_config("""
            model.arch = v2            # comment survives
            model.widths = 16,32,64
            trainer.lambda = 0.1
            data.augment = false
        """)
        assert cfg["model.arch"] == "v2"
        assert cfg["model.widths"] == (16, 32, 64)
        assert cfg["trainer.lambda"] == 0.1
        assert cfg["data.augment"] is False

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown key"):
            parse_config("model.depth = 9\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigurationError, match="bad value"):
            parse_config("trainer.epochs = soon\n")

    def test_bad_choice_rejected(self):
        with pytest.raises(ConfigurationError, match="must be one of"):
            parse_config("model.mode = sideways\n")

    def test_snapshot_roundtrip(self):
        cfg = parse_config("model.mode = static\ntrainer.lambda = 0.25\n")
        again = parse_config(cfg.snapshot())
        assert again.values == cfg.values

    def test_overrides_win(self):
        cfg = parse_config("trainer.lambda = 0.9\n",
                           overrides={"trainer.lambda": 0.5})
        assert cfg["trainer.lambda"] == 0.5

    def test_ablation_flag_mapping(self):
        from dynshuffle.cli import _overrides

        class Args:
            seed = None
            epochs = None
            lam = None
            lr = None
            data_root = None
            no_binarize = True
            no_orth_reg = True
            no_dynamic_input = True
            full_channel = True
            sharing = False

        over = _overrides(Args())
        assert over["model.binarize"] is False
        assert over["trainer.no_orth_reg"] is True
        assert over["model.mode"] == "static"
        assert over["model.full_channel"] is True


@pytest.fixture(scope="module")
def smoke_env(tmp_path_factory, request):
    root = tmp_path_factory.mktemp("cli_smoke")
    from synth import write_mnist_idx
    data = str(root / "data")
    write_mnist_idx(data, n_train=384, n_test=192, seed=6)
    cfgpath = str(root / "run.cfg")
    with open(cfgpath, "w") as fh:
        fh.write("""
model.arch = v1
model.mode = dynamic
model.in_channels = 1
data.format = mnist
data.augment = false
trainer.epochs = 1
trainer.batch_size = 64
trainer.lr0 = 0.05
trainer.warmup_epochs = 1
""")
    return {"root": str(root), "data": data, "cfg": cfgpath}


class TestCliTrain:
    def test_smoke_run_writes_outputs(self, smoke_env):
        out = os.path.join(smoke_env["root"], "run1")
        code = main(["train", "--config", smoke_env["cfg"], "--out", out,
                     "--seed", "5", "--data-root", smoke_env["data"],
                     "--lambda", "0.5"])
        assert code == 0
        rows = list(csv.DictReader(open(os.path.join(out, "metrics.csv"))))
        assert len(rows) == 1
        snapshot = open(os.path.join(out, "resolved_config.txt")).read()
        assert "trainer.lambda = 0.5" in snapshot
        assert "trainer.seed = 5" in snapshot
        for name in ("final.ckpt", "best.ckpt", "convergence.png"):
            assert os.path.exists(os.path.join(out, name))

    def test_missing_dataset_exit_3(self, smoke_env):
        out = os.path.join(smoke_env["root"], "runmissing")
        code = main(["train", "--config", smoke_env["cfg"], "--out", out,
                     "--data-root", os.path.join(smoke_env["root"], "nowhere")])
        assert code == 3

    def test_invalid_config_exit_2(self, smoke_env, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("model.mode = diagonal\n")
        code = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2


class TestCliEval:
    def test_eval_reproduces_recorded_accuracy(self, smoke_env):
        out = os.path.join(smoke_env["root"], "run_eval")
        main(["train", "--config", smoke_env["cfg"], "--out", out,
              "--seed", "2", "--data-root", smoke_env["data"]])
        rows = list(csv.DictReader(open(os.path.join(out, "metrics.csv"))))
        recorded = float(rows[-1]["test_acc_top1"])
        code = main(["eval", "--config", smoke_env["cfg"],
                     "--checkpoint", os.path.join(out, "final.ckpt"),
                     "--data-root", smoke_env["data"], "--out", out])
        assert code == 0
        erows = list(csv.DictReader(open(os.path.join(out, "eval.csv"))))
        assert float(erows[-1]["top1"]) == pytest.approx(recorded, abs=1e-9)

    def test_corrupt_checkpoint_exit_2(self, smoke_env):
        out = os.path.join(smoke_env["root"], "run_eval")
        ck = os.path.join(out, "final.ckpt")
        broken = os.path.join(out, "broken.ckpt")
        blob = open(ck, "rb").read()
        open(broken, "wb").write(blob[: len(blob) // 3])
        open(broken + ".manifest.txt", "w").write("")
        code = main(["eval", "--config", smoke_env["cfg"], "--checkpoint", broken,
                     "--data-root", smoke_env["data"]])
        assert code == 2


class TestCliGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "binarize_ste_mask" in out and "gradcheck passed" in out

    def test_negative_control_would_fail(self):
        from dynshuffle.verification import run_gradcheck
        rows, ok = run_gradcheck(0, corrupt=True)
        assert not ok
        bad = [r for r in rows if r["op"] == "corrupted_fixture"][0]
        assert not bad["pass"]


class TestCliExport:
    def test_manual_mode_exports_manual_matrices(self, smoke_env, tmp_path):
        cfgpath = tmp_path / "manual.cfg"
        cfgpath.write_text("model.arch = v1\nmodel.mode = manual\n"
                           "model.in_channels = 1\ndata.format = mnist\n")
        out = str(tmp_path / "mats")
        code = main(["export-matrices", "--config", str(cfgpath), "--out", out,
                     "--samples", "2"])
        assert code == 0
        from dynshuffle.permutation import build_manual_shuffle
        got = load_matrix_csv(os.path.join(out, "layer00_manual.csv"))
        want = build_manual_shuffle(3, 6).dense()
        assert np.array_equal(got, want)

    def test_every_matrix_has_c_ones(self, smoke_env):
        out = os.path.join(smoke_env["root"], "mats_dyn")
        code = main(["export-matrices", "--config", smoke_env["cfg"], "--out", out,
                     "--samples", "2", "--seed", "1"])
        assert code == 0
        count = 0
        for name in sorted(os.listdir(out)):
            if name.endswith(".csv"):
                m = load_matrix_csv(os.path.join(out, name))
                assert m.sum() == m.shape[0]
                assert (m.sum(axis=1) == 1).all()
                count += 1
        assert count >= 7    # 6 dynamic layers + the shared manual S
        assert os.path.exists(os.path.join(out, "matrices.png"))


class TestCliBench:
    def test_wellformed_single_rep(self, capsys):
        assert main(["bench-shuffle", "--reps", "1", "--batch", "2"]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert lines[0].startswith("shape,")
        assert len(lines) == 10

    def test_shift_beats_matmul_at_width_60(self, capsys):
        # direction claim for the memory-shift realization at 32x32 spatial
        assert main(["bench-shuffle", "--reps", "9", "--batch", "8"]) == 0
        rows = [l.split(",") for l in capsys.readouterr().out.splitlines()[1:]
                if l.strip()]
        wide = [r for r in rows if int(r[1]) >= 60 and int(r[2]) == 32]
        assert wide
        assert all(float(r[4]) < float(r[3]) for r in wide)


class TestCliGradcheckExit:
    def test_corrupt_fixture_exits_1(self):
        assert main(["gradcheck", "--seed", "0", "--corrupt"]) == 1
