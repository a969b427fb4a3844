import json
import os

import numpy as np
import pytest

from scnet import cli
from scnet import datasets as ds
from scnet import scn
from scnet import training
from scnet.config import ConfigError, ExperimentConfig, RunManifest, atomic_write, parse_text, resolve

SMALL = ["--set", "n=280", "--arch", "mlp:4x1", "--epochs", "1"]


class TestConfig:
    def test_parse_text(self):
        got = parse_text("# comment\nlr = 0.01\narch = mlp:8x2  # trailing\niscn = true\n\n")
        assert got == {"lr": 0.01, "arch": "mlp:8x2", "iscn": True}

    def test_parse_error(self):
        with pytest.raises(ConfigError):
            parse_text("lr 0.01")

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("epochs = 5\nseed = 3\nfamily = rotation\n")
        cfg = resolve(path, ["seed=9", "batch-size=32"])
        assert (cfg.epochs, cfg.seed, cfg.batch_size, cfg.family) == (5, 9, 32, "rotation2d")
        assert cfg.lr == ExperimentConfig().lr

    def test_int_promoted_to_float(self):
        assert resolve(None, ["lr=1"]).lr == 1.0

    @pytest.mark.parametrize("items", [["bogus=1"], ["dims=0"], ["arch=resnet:1x1"], ["iscn=1"],
                                       ["epochs=many"], ["family=shear"], ["test_fraction=1.5"]])
    def test_rejects_bad_values(self, items):
        with pytest.raises(ConfigError):
            resolve(None, items)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            resolve(tmp_path / "nope.cfg")

    def test_text_round_trip(self, tmp_path):
        cfg = resolve(None, ["dims=5", "iscn=true", "lr=0.003"])
        (tmp_path / "r.cfg").write_text(cfg.to_text())
        assert resolve(tmp_path / "r.cfg") == cfg

    def test_atomic_write_and_manifest(self, tmp_path):
        atomic_write(tmp_path / "sub" / "a.txt", "hello")
        assert (tmp_path / "sub" / "a.txt").read_text() == "hello"
        assert not [p for p in os.listdir(tmp_path / "sub") if p.startswith(".tmp")]
        man = RunManifest("test", {"x": 1})
        man.add("thing", tmp_path / "sub" / "a.txt")
        man.metrics = {"acc": 0.5}
        man.finish(tmp_path / "m.json")
        data = json.loads((tmp_path / "m.json").read_text())
        assert data["command"] == "test" and data["metrics"] == {"acc": 0.5}
        assert data["wall_clock"] >= 0 and data["code_version"]
        assert os.path.isabs(data["artifacts"]["thing"])


class TestHelpers:
    def test_parse_alpha_uses_degrees_for_angles(self):
        np.testing.assert_allclose(cli.parse_alpha("90", "rotation2d"), [np.pi / 2])
        np.testing.assert_allclose(cli.parse_alpha("2,-3", "translation"), [2, -3])

    def test_parse_grid(self):
        assert cli.parse_grid("0;90;180", "rotation2d").shape == (3, 1)
        assert cli.parse_grid("default", "scaling").shape == (37, 1)

    def test_load_data_errors(self, tmp_path):
        with pytest.raises(ds.DataError):
            cli.load_data(str(tmp_path / "missing.scnd"))
        with pytest.raises(ConfigError):
            cli.load_data("synthetic:faces")
        with pytest.raises(ConfigError):
            cli.load_data("idx:onlyimages")


class TestExitCodes:
    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        code = cli.main(["train-scn", "--set", "colour=red", "--out", str(tmp_path)])
        assert code == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_missing_data_is_data_error(self, tmp_path):
        code = cli.main(["train-scn", "--data", str(tmp_path / "none.scnd"), "--out", str(tmp_path / "o")])
        assert code == 3

    def test_bad_alpha_is_config_error(self, tmp_path):
        code = cli.main(["train-baseline", "--kind", "one4one", "--family", "scaling", "--alpha-star", "7"]
                        + SMALL + ["--out", str(tmp_path / "o")])
        assert code == 2

    def test_not_invertible_is_config_error(self, tmp_path):
        code = cli.main(["train-baseline", "--kind", "inverse", "--family", "sharpness"]
                        + SMALL + ["--out", str(tmp_path / "o")])
        assert code == 2

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        assert cli.main(["eval", "--model", str(tmp_path / "x.scn")]) == 3

    def test_bad_threads_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("SCN_THREADS", "lots")
        assert cli.main(["eval", "--model", str(tmp_path / "x.scn")]) == 2


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def data_file(workdir):
    path = str(workdir / "shapes.scnd")
    assert cli.main(["gen-data", "--synthetic", "shapes2d", "--n", "280", "--seed", "3", "--out", path]) == 0
    return path


@pytest.fixture(scope="module")
def scn_run(workdir, data_file):
    out = str(workdir / "scn")
    monkey = os.environ.get("SCN_THREADS")
    os.environ["SCN_THREADS"] = "0"
    try:
        code = cli.main(["train-scn", "--data", data_file, "--family", "rotation", "--dims", "3",
                         "--arch", "mlp:4x1", "--epochs", "2", "--out", out])
    finally:
        if monkey is None:
            os.environ.pop("SCN_THREADS")
        else:
            os.environ["SCN_THREADS"] = monkey
    assert code == 0
    return out


class TestWorkflow:
    def test_gen_data_outputs(self, data_file):
        data = ds.load_container(data_file)
        assert len(data) == 280
        man = json.loads(open(data_file + ".manifest.json").read())
        assert man["command"] == "gen-data" and man["metrics"]["count"] == 280

    def test_train_scn_outputs(self, scn_run):
        model = scn.load_checkpoint(os.path.join(scn_run, "model.scn"))
        assert model.dims == 3 and model.family == "rotation2d"
        cfg = resolve(os.path.join(scn_run, "config.resolved"))
        assert cfg.dims == 3 and cfg.epochs == 2
        hist = open(os.path.join(scn_run, "history.jsonl")).read().splitlines()
        assert len(hist) == 2
        man = json.loads(open(os.path.join(scn_run, "manifest.json")).read())
        assert set(man["artifacts"]) == {"config", "checkpoint", "history"}
        assert "final_ce" in man["metrics"]

    def test_eval_and_sweep(self, scn_run, data_file, workdir, capsys):
        ckpt = os.path.join(scn_run, "model.scn")
        assert cli.main(["eval", "--model", ckpt, "--data", data_file, "--grid", "0;90;180",
                         "--out", str(workdir / "eval.json")]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["points"] == 3 and 0 <= summary["min"] <= summary["mean"] <= summary["max"] <= 1
        assert cli.main(["sweep", "--model", ckpt, "--data", data_file, "--grid", "0;90",
                         "--out", str(workdir / "sweep.csv")]) == 0
        lines = (workdir / "sweep.csv").read_text().splitlines()
        assert lines[0] == "phi,accuracy" and len(lines) == 3
        assert cli.main(["sweep", "--model", ckpt, "--data", data_file, "--grid", "0;90",
                         "--profile-alpha", "90", "--out", str(workdir / "prof.csv")]) == 0
        prof = (workdir / "prof.csv").read_text().splitlines()
        assert prof[2] == lines[2]

    def test_eval_matches_library(self, scn_run, data_file, capsys):
        ckpt = os.path.join(scn_run, "model.scn")
        cli.main(["eval", "--model", ckpt, "--data", data_file, "--grid", "45"])
        summary = json.loads(capsys.readouterr().out.strip())
        table = training.evaluate(scn.load_checkpoint(ckpt), ds.load_container(data_file), [[np.pi / 4]])
        assert summary["mean"] == table.mean

    def test_export_beta(self, scn_run, workdir, capsys):
        out = str(workdir / "beta.csv")
        assert cli.main(["export-beta", "--model", os.path.join(scn_run, "model.scn"), "--out", out]) == 0
        rows = open(out).read().splitlines()
        assert rows[0] == "phi,enc1,enc2,beta1,beta2,beta3" and len(rows) == 361
        report = json.loads(open(str(workdir / "beta.report.json")).read())
        assert {"degeneracy_index", "argmax_arcs", "max_step"} <= set(report)

    def test_search_alpha(self, scn_run, data_file, workdir, capsys):
        out = str(workdir / "trace.csv")
        assert cli.main(["search-alpha", "--model", os.path.join(scn_run, "model.scn"), "--data", data_file,
                         "--alpha", "30", "--batch-size", "4", "--restarts", "3", "--out", out]) == 0
        res = json.loads(capsys.readouterr().out.strip())
        assert {"alpha", "entropy", "accuracy", "error_deg"} <= set(res)
        assert open(out).readline().strip() == "restart,alpha1,entropy"

    def test_baseline_round_trip(self, data_file, workdir, capsys):
        out = str(workdir / "o4o")
        assert cli.main(["train-baseline", "--kind", "one4one", "--alpha-star", "90", "--data", data_file,
                         "--arch", "mlp:4x1", "--epochs", "1", "--out", out]) == 0
        model = cli.load_model(os.path.join(out, "model.scn"))
        assert isinstance(model, training.BaselineModel)
        assert model.kind == "one4one" and model.alpha_star[0] == pytest.approx(np.pi / 2)
        capsys.readouterr()
        assert cli.main(["export-beta", "--model", os.path.join(out, "model.scn"),
                         "--out", str(workdir / "b.csv")]) == 2

    def test_gradcheck(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        assert "[PASS]" in capsys.readouterr().out

    def test_accept_subset(self, workdir, capsys):
        out = str(workdir / "accept.json")
        code = cli.main(["accept", "--profile", "quick", "--only", "2,3", "--out", out])
        text = capsys.readouterr().out
        results = json.loads(open(out).read())
        assert [r["number"] for r in results] == [2, 3]
        assert code == (0 if all(r["passed"] for r in results) else 5)
        assert "criteria passed" in text
