import json
import subprocess
import sys

import pytest

from mlad import cli

FAST = ["--d", "16", "--d-h", "4", "--K", "2", "--epochs", "1", "--batch", "32",
        "--dropout", "0", "--lambda2", "0.005"]


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("prepare", "--synthetic", "--system", "A", "--n-windows", 200,
               "--anomaly-rate", 0.1, "--out", root / "A") == 0
    assert run("prepare", "--synthetic", "--system", "B", "--n-windows", 200,
               "--anomaly-rate", 0.1, "--seed", 1, "--out", root / "B") == 0
    return root


def _manifest(path):
    return json.loads(path.read_text())


def test_parse_writes_templates_keys_and_manifest(tmp_path):
    log = tmp_path / "x.log"
    log.write_text("exception syndrome register: 0x008000\nexception syndrome register: 0x00AAAA\n")
    assert run("parse", log, "--out", tmp_path / "p") == 0
    assert "exception syndrome register: <*>" in (tmp_path / "p" / "templates.tsv").read_text()
    assert (tmp_path / "p" / "keys.tsv").read_text() == "0\t0\n1\t0\n"
    m = _manifest(tmp_path / "p" / "parse.manifest.json")
    assert m["command"] == "parse" and len(m["artifacts"]) == 2


def test_parse_rerun_gives_identical_digests(tmp_path):
    log = tmp_path / "x.log"
    log.write_text("".join(f"job {i} finished in {i * 3} ms\n" for i in range(50)))
    run("parse", log, "--out", tmp_path / "a")
    run("parse", log, "--out", tmp_path / "b")
    da = _manifest(tmp_path / "a" / "parse.manifest.json")["artifacts"]
    db = _manifest(tmp_path / "b" / "parse.manifest.json")["artifacts"]
    assert da == db


def test_missing_input_names_path(tmp_path, capsys):
    code = run("parse", tmp_path / "absent.log", "--out", tmp_path / "p")
    assert code == 2
    assert "absent.log" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 1


def test_prepare_45_lines_gives_3_windows(tmp_path):
    log = tmp_path / "x.log"
    log.write_text("".join(f"worker {i % 3} step ok\n" for i in range(45)))
    labels = tmp_path / "x.labels"
    labels.write_text("0\n" * 44 + "1\n")
    run("parse", log, "--out", tmp_path / "p")
    assert run("prepare", "--parsed", tmp_path / "p", "--labels", labels, "--window", 20,
               "--out", tmp_path / "w") == 0
    lines = (tmp_path / "w" / "all.windows").read_text().splitlines()
    assert len(lines) == 3 and lines[2].split("\t")[1] == "1"


def test_prepare_label_errors(tmp_path, capsys):
    log = tmp_path / "x.log"
    log.write_text("a b\n" * 10)
    run("parse", log, "--out", tmp_path / "p")
    short = tmp_path / "short.labels"
    short.write_text("0\n" * 4)
    assert run("prepare", "--parsed", tmp_path / "p", "--labels", short, "--out", tmp_path / "w") == 2
    assert "4 labels" in capsys.readouterr().err
    assert run("prepare", "--parsed", tmp_path / "p", "--labels", tmp_path / "none",
               "--out", tmp_path / "w") == 2


def test_prepare_session_mode(tmp_path):
    log = tmp_path / "h.log"
    ids = ["blk_1", "blk_2", "blk_1", "blk_3", "blk_2", "blk_1"]
    log.write_text("".join(f"081109 2036 INFO Receiving block {b} of size 5\n" for b in ids))
    csv = tmp_path / "anomaly_label.csv"
    csv.write_text("BlockId,Label\nblk_1,Normal\nblk_2,Anomaly\nblk_3,Normal\n")
    run("parse", log, "--out", tmp_path / "p")
    assert run("prepare", "--parsed", tmp_path / "p", "--raw", log, "--session-id-regex",
               r"(blk_-?\d+)", "--session-labels", csv, "--out", tmp_path / "w") == 0
    rows = (tmp_path / "w" / "all.windows").read_text().splitlines()
    # blk_3 has a single record and is skipped
    assert sorted(r.split("\t")[3] for r in rows) == ["blk_1", "blk_2"]


def test_fuse_prepared_sets(prepared, tmp_path):
    assert run("prepare", "--fuse", prepared / "A", prepared / "B", "--out", tmp_path / "AB") == 0
    rows = (tmp_path / "AB" / "all.windows").read_text().splitlines()
    assert {r.split("\t")[0] for r in rows} == {"A", "B"}
    assert len(rows) == 400
    assert (tmp_path / "AB" / "keymap.tsv").exists()


def test_train_score_roundtrip(prepared, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert run("train", "--data", prepared / "A", "--out", ckpt, *FAST) == 0
    assert (tmp_path / "m.ckpt.log").exists()
    assert _manifest(tmp_path / "m.ckpt.manifest.json")["config"]["d"] == 16
    out = tmp_path / "s.csv"
    assert run("score", "--model", ckpt, "--data", prepared / "A", "--policy", "contamination",
               "--rho", 0.5, "--dump-h", "--out", out) == 0
    assert "F1=" in capsys.readouterr().out
    header = out.read_text().splitlines()[0].split(",")
    assert header[-4:] == ["h0", "h1", "h2", "h3"]
    assert run("score", "--model", ckpt, "--data", prepared / "A", "--out", tmp_path / "q.csv") == 0


def test_score_rejects_other_checkpoint_version(prepared, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    run("train", "--data", prepared / "A", "--out", ckpt, *FAST)
    blob = ckpt.read_bytes().replace(b"MLAD-CHECKPOINT 1", b"MLAD-CHECKPOINT 2", 1)
    ckpt.write_bytes(blob)
    assert run("score", "--model", ckpt, "--data", prepared / "A", "--out", tmp_path / "s.csv") == 2
    err = capsys.readouterr().err
    assert "2" in err and "1" in err


def test_eval_alpha_sweep_rows(prepared, tmp_path):
    out = tmp_path / "sweep"
    assert run("eval", "--data", prepared / "A", "--alpha-sweep", "1,1.2,1.5", "--out", out, *FAST) == 0
    rows = (out / "report.csv").read_text().splitlines()[1:]
    assert [r.split(",")[3] for r in rows] == ["1.0", "1.2", "1.5"]
    assert (out / "alpha_sweep.png").stat().st_size > 0
    assert len(list(out.glob("scores_*.csv"))) == 3


def test_eval_ablation_row(prepared, tmp_path):
    out = tmp_path / "abl"
    assert run("eval", "--data", prepared / "A", "--ablate", "no_gmm", "--out", out,
               "--no-figures", *FAST) == 0
    rows = (out / "report.csv").read_text().splitlines()[1:]
    assert [r.split(",")[4] for r in rows] == ["none", "no_gmm"]


def test_eval_transfer(prepared, tmp_path):
    out = tmp_path / "tr"
    assert run("eval", "--data", prepared / "A", prepared / "B", "--experiment", "transfer",
               "--out", out, "--no-figures", *FAST) == 0
    assert "target B: 0 window read(s)" in (out / "summary.txt").read_text()


def test_eval_is_reproducible(prepared, tmp_path):
    for name in ("r1", "r2"):
        run("eval", "--data", prepared / "A", "--out", tmp_path / name, *FAST)
    a = _manifest(tmp_path / "r1" / "eval.manifest.json")["artifacts"]
    b = _manifest(tmp_path / "r2" / "eval.manifest.json")["artifacts"]
    assert a == b


def test_config_file_and_bad_override(prepared, tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("d = 16\nd_h = 4\nK = 2\nepochs = 1\nbatch = 32\n")
    assert run("train", "--data", prepared / "A", "--config", conf, "--out", tmp_path / "m.ckpt") == 0
    assert run("train", "--data", prepared / "A", "--config", conf, "--alpha", "3",
               "--out", tmp_path / "m.ckpt") == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mlad", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("mlad ")
