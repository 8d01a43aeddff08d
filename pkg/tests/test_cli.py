import json

import pytest

from core.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, run
from core.clipstore import Annotation, Origin
from core.geometry import Box
from core.importers.annotation_importer import parse_annotation_csv
from core.managers.dataset_manager import DatasetManager
from core.model import load_model
from core.strategies.ablation import SUMMARY_FILE
from core.trainer import FINAL_MODEL_FILE, METRICS_FILE, TEACHER_MODEL_FILE

SMALL_CONF = """\
num_classes = 3
clips_per_domain = 6
val_clips = 4
T = 4
H = 32
W = 32
instances_per_clip = 1,2
box_min = 8
box_max = 12
epochs = 1
batch_size = 4
hidden_dim = 8
pool_grid = 4
"""


def _tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "small.conf"
    conf.write_text(SMALL_CONF, encoding="utf-8")
    assert run(["gen-data", "--config", str(conf), "--out", str(root / "data"), "--seed", "5"]) == EXIT_OK
    return root, conf


def _train_args(root, conf, out, *extra):
    data = root / "data"
    return [
        "train", "--config", str(conf),
        "--source", str(data / "source"),
        "--target", str(data / "target_train"),
        "--target-val", str(data / "target_val"),
        "--out", str(out),
        *extra,
    ]


class TestUsage:
    def test_no_command(self):
        assert run([]) == EXIT_USAGE

    def test_unknown_command(self):
        assert run(["fly"]) == EXIT_USAGE

    def test_unknown_flag(self, tmp_path):
        assert run(["gen-data", "--out", str(tmp_path), "--colour", "red"]) == EXIT_USAGE

    def test_missing_required_flag(self):
        assert run(["train", "--source", "s"]) == EXIT_USAGE

    @pytest.mark.parametrize("command", ["gen-data", "train", "eval", "mix-preview", "propagate", "stats", "ablate"])
    def test_help(self, command, capsys):
        assert run([command, "--help"]) == EXIT_OK
        out = capsys.readouterr().out
        for flag in ("--seed", "--config", "--workers"):
            assert flag in out

    def test_train_help_lists_ablation_switches(self, capsys):
        run(["train", "--help"])
        out = capsys.readouterr().out
        for flag in ("--no-adapt", "--no-mix", "--no-pseudo", "--no-resize", "--aux"):
            assert flag in out


class TestGenData:
    def test_layout(self, workspace):
        root, _ = workspace
        for split in ("source", "target_train", "target_val"):
            assert (root / "data" / split).is_dir()
        assert not (root / "data" / "auxiliary").exists()

    def test_byte_identical(self, workspace, tmp_path):
        root, conf = workspace
        assert run(["gen-data", "--config", str(conf), "--out", str(tmp_path / "again"), "--seed", "5"]) == EXIT_OK
        assert _tree_bytes(tmp_path / "again") == _tree_bytes(root / "data")

    def test_auxiliary(self, workspace, tmp_path):
        _, conf = workspace
        args = ["gen-data", "--config", str(conf), "--out", str(tmp_path), "--aux-clips", "2", "--missing-classes", "1"]
        assert run(args) == EXIT_OK
        assert (tmp_path / "auxiliary").is_dir()

    def test_bad_config_value(self, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("box_max = 500\n", encoding="utf-8")
        assert run(["gen-data", "--config", str(conf), "--out", str(tmp_path / "d")]) == EXIT_DATA

    def test_unknown_config_key(self, tmp_path):
        conf = tmp_path / "bad.conf"
        conf.write_text("colour = red\n", encoding="utf-8")
        assert run(["gen-data", "--config", str(conf), "--out", str(tmp_path / "d")]) == EXIT_DATA


class TestTrainAndEval:
    def test_train_writes_outputs(self, workspace, tmp_path, capsys):
        root, conf = workspace
        assert run(_train_args(root, conf, tmp_path / "run")) == EXIT_OK
        for name in (METRICS_FILE, FINAL_MODEL_FILE, TEACHER_MODEL_FILE):
            assert (tmp_path / "run" / name).exists()
        assert (tmp_path / "run" / "logs" / "operation.log").exists()
        assert "target mAP:" in capsys.readouterr().out

    def test_train_is_deterministic(self, workspace, tmp_path):
        root, conf = workspace
        for name in ("a", "b"):
            assert run(_train_args(root, conf, tmp_path / name)) == EXIT_OK
        for name in (METRICS_FILE, FINAL_MODEL_FILE):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_no_adapt_is_source_only(self, workspace, tmp_path):
        root, conf = workspace
        assert run(_train_args(root, conf, tmp_path / "base", "--no-adapt")) == EXIT_OK
        line = json.loads((tmp_path / "base" / METRICS_FILE).read_text(encoding="utf-8").splitlines()[0])
        assert line["mean_lambda"] is None

    def test_missing_source(self, workspace, tmp_path):
        root, conf = workspace
        args = _train_args(root, conf, tmp_path / "run")
        args[args.index("--source") + 1] = str(tmp_path / "nowhere")
        assert run(args) == EXIT_DATA

    def test_eval(self, workspace, tmp_path, capsys):
        root, conf = workspace
        assert run(_train_args(root, conf, tmp_path / "run")) == EXIT_OK
        report_path = tmp_path / "eval" / "report.json"
        args = [
            "eval",
            "--model", str(tmp_path / "run" / FINAL_MODEL_FILE),
            "--data", str(root / "data" / "target_val"),
            "--out", str(report_path),
        ]
        assert run(args) == EXIT_OK
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert 0.0 <= report["map"] <= 1.0
        assert len(report["confusion"]) == 3
        assert report["iou_threshold"] == 0.5
        assert "mAP:" in capsys.readouterr().out

    def test_eval_missing_model(self, workspace, tmp_path):
        root, _ = workspace
        args = ["eval", "--model", str(tmp_path / "none.mdl1"), "--data", str(root / "data" / "target_val"), "--out", str(tmp_path / "r.json")]
        assert run(args) == EXIT_DATA


class TestOtherCommands:
    def test_stats(self, workspace, tmp_path, capsys):
        root, _ = workspace
        assert run(["stats", "--data", str(root / "data" / "source"), "--out", str(tmp_path / "stats.json")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "samples: 6" in out
        assert "long-tail ratio:" in out
        stats = json.loads((tmp_path / "stats.json").read_text(encoding="utf-8"))
        assert stats["samples"] == 6
        assert sum(stats["histogram"].values()) == stats["annotations"]

    def test_mix_preview(self, workspace, tmp_path):
        root, conf = workspace
        data = root / "data"
        args = [
            "mix-preview", "--config", str(conf),
            "--source", str(data / "source"),
            "--target", str(data / "target_train"),
            "--out", str(tmp_path),
            "--count", "3",
        ]
        assert run(args) == EXIT_OK
        assert len(list((tmp_path / "clips").glob("*.clp"))) == 3
        header = (tmp_path / "annotations.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header.endswith("origin,confidence,kept")

    def test_mix_preview_rejects_pixelless_box(self, workspace, tmp_path):
        root, conf = workspace
        data = root / "data"
        source = DatasetManager(data / "source").load()
        first = source.samples[0]
        flat = Annotation(Box(5, 5, 5, 9), 0, 99, Origin.SOURCE_PRIMARY)
        DatasetManager(tmp_path / "bad_source").save(
            source.derive([first.with_annotations(first.annotations + (flat,)), *source.samples[1:]])
        )
        args = [
            "mix-preview", "--config", str(conf),
            "--source", str(tmp_path / "bad_source"),
            "--target", str(data / "target_train"),
            "--out", str(tmp_path / "preview"),
        ]
        assert run(args) == EXIT_DATA
        assert not (tmp_path / "preview" / "annotations.csv").exists()

    def test_propagate(self, tmp_path, capsys):
        keys = tmp_path / "keys.csv"
        dets = tmp_path / "dets.csv"
        keys.write_text("v@0,0.1,0.1,0.3,0.3,2,0\n", encoding="utf-8")
        dets.write_text("v@1,0.1,0.1,0.3,0.29,-1,0\nv@1,0.6,0.6,0.8,0.8,-1,0\n", encoding="utf-8")
        out = tmp_path / "dense.csv"
        assert run(["propagate", "--keyframes", str(keys), "--detections", str(dets), "--out", str(out)]) == EXIT_OK
        assert "propagated annotations: 2" in capsys.readouterr().out
        with open(out, encoding="utf-8", newline="") as f:
            records = parse_annotation_csv(f)
        assert [(r.sample_id, r.class_id) for r in records] == [("v@0", 2), ("v@1", 2)]

    def test_propagate_missing_keyframe(self, tmp_path):
        keys = tmp_path / "keys.csv"
        dets = tmp_path / "dets.csv"
        keys.write_text("v@5,0.1,0.1,0.3,0.3,2,0\n", encoding="utf-8")
        dets.write_text("v@1,0.1,0.1,0.3,0.3,-1,0\n", encoding="utf-8")
        args = ["propagate", "--keyframes", str(keys), "--detections", str(dets), "--out", str(tmp_path / "o.csv")]
        assert run(args) == EXIT_DATA

    def test_ablate(self, workspace, tmp_path, capsys):
        root, conf = workspace
        args = _train_args(root, conf, tmp_path)[1:]
        assert run(["ablate", *args, "--rows", "baseline,full", "--seeds", "1,2"]) == EXIT_OK
        summary = json.loads((tmp_path / SUMMARY_FILE).read_text(encoding="utf-8"))
        assert list(summary["rows"]) == ["baseline", "full"]
        assert (tmp_path / "full" / "seed_2" / FINAL_MODEL_FILE).exists()
        _, spec = load_model(tmp_path / "baseline" / "seed_1" / FINAL_MODEL_FILE)
        assert spec.num_classes == 3

    @pytest.mark.parametrize("extra", [["--rows", "everything"], ["--seeds", "1,x"]])
    def test_ablate_bad_arguments(self, workspace, tmp_path, extra):
        root, conf = workspace
        args = _train_args(root, conf, tmp_path)[1:]
        assert run(["ablate", *args, *extra]) == EXIT_USAGE
