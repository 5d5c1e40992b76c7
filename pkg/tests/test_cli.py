import json
import os

import pytest

from protoprobe import cli


def run_cli(argv):
    return cli.main(list(argv))


def gen_dataset(tmp_path, name="d.gcd", classes=4, old=2, per_class=20,
                dim=8, seed=0, class_sep=6.0):
    path = str(tmp_path / name)
    code = run_cli([
        "gen", "--classes", str(classes), "--old", str(old),
        "--per-class", str(per_class), "--dim", str(dim),
        "--class-sep", str(class_sep), "--seed", str(seed), "--out", path,
    ])
    assert code == 0
    return path


TRAIN_FAST = ["--epochs", "2", "--batch-size", "16", "--tau-f", "0.4",
              "--knn-k", "8", "--out-dim", "8", "--num-restarts", "2"]


# ---------------------------------------------------------------------------
# gen

def test_gen_counts_and_manifest(tmp_path, capsys):
    path = gen_dataset(tmp_path, classes=10, old=5, per_class=100, dim=32)
    out = capsys.readouterr().out
    assert "250 labelled" in out and "750 unlabelled" in out
    manifest = json.loads((tmp_path / "d.gcd.manifest.json").read_text())
    assert manifest["classes"] == 10
    assert len(manifest["old_classes"]) == 5
    assert manifest["labelled"] == 250
    assert manifest["unlabelled"] == 750


def test_gen_deterministic_files(tmp_path):
    a = gen_dataset(tmp_path, name="a.gcd", seed=3)
    b = gen_dataset(tmp_path, name="b.gcd", seed=3)
    assert open(a, "rb").read() == open(b, "rb").read()
    c = gen_dataset(tmp_path, name="c.gcd", seed=4)
    assert open(a, "rb").read() != open(c, "rb").read()


# ---------------------------------------------------------------------------
# train

def _strip_timings(line):
    record = json.loads(line)
    return {k: v for k, v in record.items() if not k.endswith("_ms")}


def test_train_run_dir_layout(tmp_path, capsys):
    data = gen_dataset(tmp_path)
    run = str(tmp_path / "run")
    code = run_cli(["train", "--data", data, "--out", run, "--quiet",
                    *TRAIN_FAST])
    assert code == 0
    assert os.path.isfile(os.path.join(run, "config.txt"))
    assert os.path.isfile(os.path.join(run, "metrics.jsonl"))
    assert os.path.isfile(os.path.join(run, "report.json"))
    assert os.path.isfile(os.path.join(run, "report.txt"))
    assert os.path.isfile(os.path.join(run, "checkpoints", "final.ckpt"))

    lines = open(os.path.join(run, "metrics.jsonl")).read().splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    for key in ("epoch", "k_e", "omega", "lr", "total", "cluster_ms"):
        assert key in first

    report = json.loads(open(os.path.join(run, "report.json")).read())
    assert "eval" in report and "bias" in report
    assert 0.0 <= report["eval"]["acc_all"] <= 1.0


def test_train_metrics_stream_deterministic(tmp_path):
    data = gen_dataset(tmp_path)
    runs = []
    for name in ("r1", "r2"):
        run = str(tmp_path / name)
        assert run_cli(["train", "--data", data, "--out", run, "--quiet",
                        *TRAIN_FAST, "--seed", "7"]) == 0
        with open(os.path.join(run, "metrics.jsonl")) as fh:
            runs.append([_strip_timings(line) for line in fh])
    assert runs[0] == runs[1]


def test_train_config_layering(tmp_path):
    data = gen_dataset(tmp_path)
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("epochs=5\nlr=0.05\n# comment\n\nbatch_size=16\n")
    run = str(tmp_path / "run")
    code = run_cli(["train", "--data", data, "--out", run, "--quiet",
                    "--config", str(cfg), "--epochs", "1", "--tau-f", "0.4",
                    "--knn-k", "8", "--out-dim", "8", "--num-restarts", "2"])
    assert code == 0
    echoed = dict(
        line.split("=", 1)
        for line in open(os.path.join(run, "config.txt")).read().splitlines()
    )
    assert echoed["epochs"] == "1"       # flag beats file
    assert echoed["lr"] == "0.05"        # file beats default
    assert echoed["batch_size"] == "16"


def test_train_ablation_flags_echoed(tmp_path):
    data = gen_dataset(tmp_path)
    run1 = str(tmp_path / "no_pp")
    assert run_cli(["train", "--data", data, "--out", run1, "--quiet",
                    "--ablate", "no-pp", *TRAIN_FAST]) == 0
    echoed = open(os.path.join(run1, "config.txt")).read()
    assert "potential_prototypes=False" in echoed

    run2 = str(tmp_path / "frozen")
    assert run_cli(["train", "--data", data, "--out", run2, "--quiet",
                    "--ablate", "frozen-pp", *TRAIN_FAST]) == 0
    echoed = open(os.path.join(run2, "config.txt")).read()
    assert "frozen_potential=True" in echoed


def test_train_periodic_checkpoints(tmp_path):
    data = gen_dataset(tmp_path)
    run = str(tmp_path / "run")
    assert run_cli(["train", "--data", data, "--out", run, "--quiet",
                    "--checkpoint-every", "1", *TRAIN_FAST]) == 0
    names = sorted(os.listdir(os.path.join(run, "checkpoints")))
    assert names == ["epoch-0001.ckpt", "epoch-0002.ckpt", "final.ckpt"]


# ---------------------------------------------------------------------------
# eval

def test_eval_raw_features_scores_planted_data(tmp_path, capsys):
    data = gen_dataset(tmp_path, classes=4, old=2, per_class=25, class_sep=8.0)
    code = run_cli(["eval", "--data", data, "--tau-f", "0.4", "--knn-k", "8",
                    "--num-restarts", "2"])
    assert code == 0
    out = capsys.readouterr().out
    payload = json.loads(out.splitlines()[-1])
    assert payload["eval"]["acc_all"] >= 0.9
    assert payload["eval"]["k_e"] >= 2
    assert "bias" in payload


def test_eval_with_checkpoint(tmp_path, capsys):
    data = gen_dataset(tmp_path)
    run = str(tmp_path / "run")
    assert run_cli(["train", "--data", data, "--out", run, "--quiet",
                    *TRAIN_FAST]) == 0
    capsys.readouterr()
    code = run_cli(["eval", "--data", data,
                    "--checkpoint", os.path.join(run, "checkpoints",
                                                 "final.ckpt"),
                    "--tau-f", "0.4", "--knn-k", "8", "--out-dim", "8",
                    "--num-restarts", "2"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert 0.0 <= payload["eval"]["acc_all"] <= 1.0


def test_eval_sweep(tmp_path, capsys):
    data = gen_dataset(tmp_path)
    capsys.readouterr()
    code = run_cli(["eval", "--data", data, "--sweep", "k=4,8",
                    "--tau-f", "0.4", "--num-restarts", "2"])
    assert code == 0
    out = capsys.readouterr().out
    assert "codelength" in out.splitlines()[0]
    payload = json.loads(out.splitlines()[-1])
    assert [row["k"] for row in payload["sweep"]] == [4, 8]
    for row in payload["sweep"]:
        assert row["k_e"] >= 1


def test_eval_bad_sweep_is_usage_error(tmp_path):
    data = gen_dataset(tmp_path)
    assert run_cli(["eval", "--data", data, "--sweep", "tau=1,2"]) == 1


# ---------------------------------------------------------------------------
# bench

def test_bench_outputs_and_warning(tmp_path, capsys):
    data = gen_dataset(tmp_path)
    code = run_cli(["bench", "--data", data, "--repeats", "1",
                    "--tau-f", "0.4", "--knn-k", "8", "--num-restarts", "2"])
    assert code == 0
    captured = capsys.readouterr()
    assert "warning" in captured.err
    payload = json.loads(captured.out.splitlines()[-1])
    assert payload["full_ms"] > 0 and payload["unlabelled_ms"] > 0


def test_bench_compare_kernels(tmp_path, capsys):
    data = gen_dataset(tmp_path)
    code = run_cli(["bench", "--data", data, "--repeats", "1",
                    "--compare-kernels", "--tau-f", "0.4", "--knn-k", "8",
                    "--num-restarts", "2"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert set(payload["kernels"]) == {"cython", "python"}


# ---------------------------------------------------------------------------
# exit codes

def test_usage_errors_exit_1(tmp_path, capsys):
    assert run_cli(["train"]) == 1                    # missing --data
    assert run_cli(["gen", "--classes", "3"]) == 1    # missing required flags
    data = gen_dataset(tmp_path)
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("no_such_key=1\n")
    assert run_cli(["train", "--data", data, "--out", str(tmp_path / "r"),
                    "--config", str(bad_cfg)]) == 1
    capsys.readouterr()


def test_data_errors_exit_2(tmp_path, capsys):
    assert run_cli(["eval", "--data", str(tmp_path / "missing.gcd")]) == 2
    broken = tmp_path / "broken.gcd"
    broken.write_text("not a dataset\n")
    assert run_cli(["eval", "--data", str(broken)]) == 2
    capsys.readouterr()


def test_divergence_exits_3(tmp_path, capsys):
    data = gen_dataset(tmp_path)
    code = run_cli(["train", "--data", data, "--out", str(tmp_path / "r"),
                    "--quiet", "--epochs", "1", "--batch-size", "16",
                    "--lr", "1e9", "--tau-f", "0.4", "--knn-k", "8",
                    "--out-dim", "8", "--num-restarts", "2"])
    assert code == 3
    capsys.readouterr()


def test_help_exits_0():
    with pytest.raises(SystemExit) as exc:
        run_cli(["--help"])
    assert exc.value.code == 0
