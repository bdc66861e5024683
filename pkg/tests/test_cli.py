import json
import os

import pytest

from gmrec.cli import main
from gmrec.dataio import SynthSpec, write_synthetic


@pytest.fixture
def synth_file(tmp_path):
    path = str(tmp_path / "data.tsv")
    write_synthetic(SynthSpec(users=30, items=20, samples=240, rule="xor_cross", seed=5), path)
    return path


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestUsage:
    def test_no_command_is_usage_error(self, capsys):
        code, _, err = run(capsys)
        assert code == 1

    def test_unknown_command_is_usage_error(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        code, _, err = run(capsys, "gradcheck", "--bogus", "1")
        assert code == 1
        assert "usage" in err.lower()

    def test_missing_data_file_is_data_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "evaluate", "--data", str(tmp_path / "nope.tsv"),
                           "--ckpt", str(tmp_path / "nope.ckpt"))
        assert code == 2


class TestChecks:
    def test_gradcheck_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--d", "6", "--seed", "1", "--instances", "2")
        assert code == 0
        value = float(out.split("max_relative_error=")[1])
        assert value < 1e-4

    def test_gradcheck_fails_with_absurd_tolerance(self, capsys):
        code, _, err = run(capsys, "gradcheck", "--d", "6", "--seed", "1",
                           "--instances", "1", "--tol", "1e-18")
        assert code == 2

    def test_fmcheck_passes(self, capsys):
        code, out, _ = run(capsys, "fmcheck", "--n", "10", "--seed", "2")
        assert code == 0
        value = float(out.split("max_abs_deviation=")[1])
        assert value < 1e-9


class TestSynth:
    def test_writes_dataset_and_sidecar(self, capsys, tmp_path):
        out = str(tmp_path / "synthetic.tsv")
        code, _, _ = run(capsys, "synth", "--out", out, "--users", "10", "--items", "8",
                         "--samples", "40", "--seed", "3")
        assert code == 0
        assert os.path.exists(out)
        sidecar = json.loads(open(out + ".rule.json").read())
        assert sidecar["spec"]["users"] == 10

    def test_same_seed_same_file(self, capsys, tmp_path):
        a = str(tmp_path / "a.tsv")
        b = str(tmp_path / "b.tsv")
        run(capsys, "synth", "--out", a, "--seed", "3")
        run(capsys, "synth", "--out", b, "--seed", "3")
        assert open(a).read() == open(b).read()


class TestTrainEvaluatePredict:
    def test_full_pipeline(self, capsys, tmp_path, synth_file):
        ckpt = str(tmp_path / "model.ckpt")
        code, out, err = run(
            capsys, "train", "--data", synth_file, "--out", ckpt,
            "--dim", "8", "--epochs", "3", "--batch-size", "64", "--seed", "0",
        )
        assert code == 0, err
        epoch_lines = [l for l in out.splitlines() if l.startswith("epoch=")]
        assert len(epoch_lines) == 3
        assert "train_loss=" in epoch_lines[0]
        assert "val_auc=" in epoch_lines[0]
        assert os.path.exists(ckpt)

        code, out, err = run(capsys, "evaluate", "--data", synth_file, "--ckpt", ckpt)
        assert code == 0, err
        assert out.startswith("auc=")
        assert "ndcg@5=" in out and "ndcg@10=" in out

        line = open(synth_file).readline().rstrip("\n")
        code, out, err = run(capsys, "predict", "--ckpt", ckpt, "--line", line)
        assert code == 0, err
        assert out.startswith("score=") and "prob=" in out

        fields_only = "\t".join(line.split("\t")[1:])
        code2, out2, _ = run(capsys, "predict", "--ckpt", ckpt, "--line", fields_only)
        assert code2 == 0
        assert out2 == out

    def test_train_deterministic_logs(self, capsys, tmp_path, synth_file):
        args = ["train", "--data", synth_file, "--dim", "8", "--epochs", "2",
                "--batch-size", "64", "--seed", "7"]
        code1, out1, _ = run(capsys, *args)
        code2, out2, _ = run(capsys, *args)
        assert code1 == code2 == 0
        lines1 = [l for l in out1.splitlines() if l.startswith("epoch=")]
        lines2 = [l for l in out2.splitlines() if l.startswith("epoch=")]
        assert lines1 == lines2

    def test_evaluate_test_split(self, capsys, tmp_path, synth_file):
        ckpt = str(tmp_path / "model.ckpt")
        run(capsys, "train", "--data", synth_file, "--out", ckpt,
            "--dim", "8", "--epochs", "1", "--batch-size", "64")
        code, out, _ = run(capsys, "evaluate", "--data", synth_file, "--ckpt", ckpt,
                           "--split", "test", "--seed", "0")
        assert code == 0
        assert out.startswith("auc=")

    def test_evaluate_per_user_breakdown(self, capsys, tmp_path, synth_file):
        ckpt = str(tmp_path / "model.ckpt")
        run(capsys, "train", "--data", synth_file, "--out", ckpt,
            "--dim", "8", "--epochs", "1", "--batch-size", "64")
        breakdown = tmp_path / "per_user.txt"
        code, _, _ = run(capsys, "evaluate", "--data", synth_file, "--ckpt", ckpt,
                         "--per-user", str(breakdown))
        assert code == 0
        text = breakdown.read_text()
        assert "user=" in text and "ndcg@10=" in text

    @pytest.mark.filterwarnings("ignore:.*fewer than 5 samples.*")
    def test_evaluate_empty_test_split_is_data_error(self, capsys, tmp_path):
        # every user has fewer than 5 samples, so the per-user split sends
        # everything to train and the test partition is empty
        data = tmp_path / "tiny.tsv"
        data.write_text("1\tu1\ti1\n0\tu1\ti2\n1\tu2\ti1\n0\tu2\ti2\n")
        ckpt = str(tmp_path / "model.ckpt")
        run(capsys, "train", "--data", str(data), "--out", ckpt,
            "--dim", "4", "--epochs", "0")
        code, _, err = run(capsys, "evaluate", "--data", str(data), "--ckpt", ckpt,
                           "--split", "test", "--seed", "0")
        assert code == 2
        assert "no samples" in err

    @pytest.mark.filterwarnings("ignore:.*fewer than 5 samples.*")
    def test_evaluate_single_class_is_data_error(self, capsys, tmp_path):
        data = tmp_path / "oneclass.tsv"
        data.write_text("1\tu1\ti1\n1\tu1\ti2\n1\tu2\ti1\n")
        ckpt = str(tmp_path / "model.ckpt")
        run(capsys, "train", "--data", str(data), "--out", ckpt,
            "--dim", "4", "--epochs", "0")
        code, _, err = run(capsys, "evaluate", "--data", str(data), "--ckpt", ckpt)
        assert code == 2
        assert "error" in err.lower()

    def test_predict_unknown_attribute_is_data_error(self, capsys, tmp_path, synth_file):
        ckpt = str(tmp_path / "model.ckpt")
        run(capsys, "train", "--data", synth_file, "--out", ckpt,
            "--dim", "4", "--epochs", "0")
        code, _, err = run(capsys, "predict", "--ckpt", ckpt,
                           "--line", "unseen_attribute\tiid=i0")
        assert code == 2
        assert "embedding" in err

    def test_config_file_precedence(self, capsys, tmp_path, synth_file):
        config = tmp_path / "run.conf"
        config.write_text("epochs = 2\ndim = 4\n# comment\nbatch-size = 64\n")
        code, out, _ = run(capsys, "train", "--data", synth_file,
                           "--config", str(config), "--epochs", "1")
        assert code == 0
        epoch_lines = [l for l in out.splitlines() if l.startswith("epoch=")]
        assert len(epoch_lines) == 1  # flag beats config file

        code, out, _ = run(capsys, "train", "--data", synth_file, "--config", str(config))
        epoch_lines = [l for l in out.splitlines() if l.startswith("epoch=")]
        assert len(epoch_lines) == 2  # config file beats default


class TestAblateAndMatrices:
    def test_ablate_table(self, capsys, tmp_path, synth_file):
        code, out, err = run(
            capsys, "ablate", "--data", synth_file,
            "--variants", "inner=mlp,cross=bi,fuse=gru;inner=mlp,cross=none,fuse=gru;mode=fm",
            "--seeds", "0", "--dim", "4", "--epochs", "2", "--batch-size", "64",
        )
        assert code == 0, err
        lines = out.strip().splitlines()
        table = [l for l in lines if not l.startswith("#")]
        assert table[0].startswith("variant")
        assert len(table) == 4
        assert any(l.startswith("mode=fm") for l in table)

    def test_export_matrices(self, capsys, tmp_path, synth_file):
        ckpt = str(tmp_path / "model.ckpt")
        run(capsys, "train", "--data", synth_file, "--out", ckpt,
            "--dim", "4", "--epochs", "1", "--batch-size", "64")
        code, out, err = run(capsys, "export-matrices", "--ckpt", ckpt,
                             "--group-a", "ua=*", "--group-b", "ic=*")
        assert code == 0, err
        assert "cosine similarity" in out
        assert "node matching" in out
        assert "ua=c0" in out

    def test_export_matrices_unknown_name(self, capsys, tmp_path, synth_file):
        ckpt = str(tmp_path / "model.ckpt")
        run(capsys, "train", "--data", synth_file, "--out", ckpt,
            "--dim", "4", "--epochs", "1", "--batch-size", "64")
        code, _, err = run(capsys, "export-matrices", "--ckpt", ckpt,
                           "--group-a", "nonexistent", "--group-b", "ic=*")
        assert code == 2
