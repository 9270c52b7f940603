import csv
import json

import pytest

from afdgcf import cli, desk


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw.tsv"
    desk.write_tsv(desk.generate(1, 80, 100, 2500), raw)
    assert cli.main(["prepare", "--input", str(raw), "--out", str(root / "ds"),
                     "--min-user-inter", "5", "--min-item-inter", "5"]) == 0
    return root


TRAIN_ARGS = ["--d", "8", "--L", "2", "--max-epochs", "3", "--batch-size", "512", "--alpha", "0.01"]


def run_train(root, name, *extra):
    out = root / name
    code = cli.main(["train", "--data", str(root / "ds"), "--out", str(out), *TRAIN_ARGS, *extra])
    return code, out


def test_prepare_outputs(prepared):
    ds = prepared / "ds"
    stats = json.loads((ds / "stats.json").read_text())
    assert {"num_users", "num_items", "density"} <= set(stats)
    assert json.loads((ds / "config.resolved.json").read_text())["min_user_inter"] == 5


def test_prepare_is_byte_identical(prepared, tmp_path):
    args = ["prepare", "--input", str(prepared / "raw.tsv"), "--out", str(tmp_path / "again"),
            "--min-user-inter", "5", "--min-item-inter", "5"]
    assert cli.main(args) == 0
    for name in ("train.tsv", "valid.tsv", "test.tsv", "stats.json"):
        assert (tmp_path / "again" / name).read_bytes() == (prepared / "ds" / name).read_bytes()


def test_prepare_trivial_thresholds_keep_everything(tmp_path):
    lines = [f"u{u}\ti{i}\t1\t{10 * u + i}" for u in range(4) for i in range(3)]
    (tmp_path / "toy.tsv").write_text("\n".join(lines) + "\n")
    assert cli.main(["prepare", "--input", str(tmp_path / "toy.tsv"), "--out", str(tmp_path / "d"),
                     "--min-user-inter", "1", "--min-item-inter", "1"]) == 0
    assert json.loads((tmp_path / "d" / "stats.json").read_text())["num_interactions"] == 12


def test_prepare_bad_input(tmp_path):
    (tmp_path / "bad.tsv").write_text("u1\ti1\t5\t100\nbroken\n")
    assert cli.main(["prepare", "--input", str(tmp_path / "bad.tsv"), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["prepare", "--input", str(tmp_path / "none.tsv"), "--out", str(tmp_path / "o")]) == 2


def test_train_evaluate_diagnose(prepared):
    code, out = run_train(prepared, "run")
    assert code == 0
    for name in ("history.jsonl", "checkpoint.afde", "valid_metrics.json", "config.resolved.json"):
        assert (out / name).exists()
    history = [json.loads(x) for x in (out / "history.jsonl").read_text().splitlines()]
    best = max(h["valid_ndcg"] for h in history)
    ckpt = str(out / "checkpoint.afde")
    # evaluating the checkpoint on valid reproduces the logged best exactly
    assert cli.main(["evaluate", "--checkpoint", ckpt, "--data", str(prepared / "ds"), "--split", "valid",
                     "--out", str(prepared / "ev")]) == 0
    assert json.loads((prepared / "ev" / "metrics_valid_k10.json").read_text())["ndcg"] == best
    assert cli.main(["evaluate", "--checkpoint", ckpt, "--data", str(prepared / "ds"), "--k", "5,10"]) == 0
    for k in (5, 10):
        rows = list(csv.DictReader(open(out / f"metrics_test_k{k}.csv")))
        assert len(rows) == 1 and int(rows[0]["k"]) == k
    assert cli.main(["diagnose", "--checkpoint", ckpt, "--data", str(prepared / "ds"), "--layers", "3",
                     "--out", str(prepared / "dg")]) == 0
    rows = list(csv.DictReader(open(prepared / "dg" / "diagnostics.csv")))
    assert [int(r["layer"]) for r in rows] == [0, 1, 2, 3]
    assert list(rows[0]) == cli.DIAG_COLUMNS
    t1 = json.loads((prepared / "dg" / "norm_identity.json").read_text())
    assert t1["norm_identity_residual"] < 1e-8
    assert cli.main(["diagnose", "--checkpoint", ckpt, "--data", str(prepared / "ds"), "--layers", "0",
                     "--out", str(prepared / "dg0")]) == 0
    assert len(list(csv.DictReader(open(prepared / "dg0" / "diagnostics.csv")))) == 1


def test_wrong_d_is_shape_mismatch(prepared, capsys):
    code, out = run_train(prepared, "run_d")
    assert code == 0
    code = cli.main(["evaluate", "--checkpoint", str(out / "checkpoint.afde"), "--data", str(prepared / "ds"),
                     "--d", "9"])
    assert code == 2
    assert "d=8" in capsys.readouterr().err


def test_missing_dataset_leaves_no_output(tmp_path):
    out = tmp_path / "never"
    assert cli.main(["train", "--data", str(tmp_path / "missing"), "--out", str(out)]) == 2
    assert not out.exists()


def test_config_errors(prepared, tmp_path):
    assert cli.main(["train", "--data", str(prepared / "ds"), "--out", str(tmp_path / "a"), "--alpha", "2"]) == 1
    assert cli.main(["train", "--data", str(prepared / "ds"), "--out", str(tmp_path / "a"), "--d", "x"]) == 1
    assert cli.main(["nonsense"]) == 1
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 3\n")
    assert cli.main(["train", "--config", str(cfg), "--data", str(prepared / "ds"), "--out", str(tmp_path / "b")]) == 1


def test_flags_override_config_file(prepared, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# desk run\nd = 4\nL = 1\nmax_epochs = 1\nbatch_size = 1024\nalpha = 0.5\n")
    out = tmp_path / "o"
    assert cli.main(["train", "--config", str(cfg), "--data", str(prepared / "ds"), "--out", str(out),
                     "--alpha", "0.25"]) == 0
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["d"] == 4 and resolved["alpha"] == 0.25 and resolved["patience"] == 10


def test_diverged_exit_code(prepared, tmp_path, monkeypatch):
    from afdgcf.errors import Diverged

    def boom(*a, **k):
        raise Diverged("non-finite loss")

    monkeypatch.setattr(cli, "train", boom)
    code, _ = run_train(prepared, "div")
    assert code == 3


def test_train_rerun_is_byte_identical(prepared):
    _, a = run_train(prepared, "det_a")
    _, b = run_train(prepared, "det_b")
    for name in ("history.jsonl", "valid_metrics.json", "checkpoint.afde"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sweep_grid(prepared):
    out = prepared / "sweep"
    assert cli.main(["sweep", "--data", str(prepared / "ds"), "--out", str(out), "--alphas", "0,1e-3",
                     "--layer-grid", "1,2,3", "--d", "4", "--max-epochs", "1", "--batch-size", "2048"]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 6
    assert list(rows[0]) == ["alpha", "L", "recall", "ndcg", "map", "epochs_to_best", "final_corr", "status"]
    assert all(r["status"] == "ok" for r in rows)


def test_sweep_records_failures(prepared, tmp_path, monkeypatch):
    from afdgcf.errors import Diverged
    real = cli.train

    def flaky(ds, adj, cfg, **kw):
        if cfg.alpha > 0:
            raise Diverged("collapsed")
        return real(ds, adj, cfg, **kw)

    monkeypatch.setattr(cli, "train", flaky)
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--data", str(prepared / "ds"), "--out", str(out), "--alphas", "0,0.1",
                     "--d", "4", "--L", "1", "--max-epochs", "1", "--batch-size", "2048"]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("Diverged")


def test_input_dataset_not_mutated(prepared):
    before = {p.name: p.read_bytes() for p in (prepared / "ds").iterdir()}
    run_train(prepared, "mut")
    assert {p.name: p.read_bytes() for p in (prepared / "ds").iterdir()} == before
