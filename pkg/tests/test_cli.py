import json

import pytest

from wssgg.cli import main
from wssgg.pipeline import write_dataset
from wssgg.synthetic import planted_corpus


@pytest.fixture()
def workspace(tmp_path):
    vocab, records = planted_corpus(12, seed=1)
    vocab.save(tmp_path / "ent.txt", tmp_path / "rel.txt")
    write_dataset(str(tmp_path / "train.jsonl"), records, vocab, binary=True)
    (tmp_path / "run.toml").write_text(
        'entity_vocab = "ent.txt"\nrelation_vocab = "rel.txt"\n'
        "d = 8\nd_cnn = 32\nhidden = 8\nbatch_size = 4\nlr = 0.01\nn_t = 1\n"
    )
    return tmp_path, vocab, records


def run(*argv):
    return main([str(a) for a in argv])


def test_train_infer_eval_round(workspace, capsys):
    ws, _, _ = workspace
    cfg = ws / "run.toml"
    assert run("train", ws / "train.jsonl", "--config", cfg, "--steps", 3, "--out", ws / "m.ckpt", "--trace", ws / "t.csv") == 0
    assert (ws / "m.ckpt").read_bytes()[:4] == b"WSG1"
    header = (ws / "t.csv").read_text().splitlines()[0]
    assert header == "step,grd,det_0,det_1,relsub,relobj,cssub,csobj,cspred,total"
    assert run("infer", ws / "train.jsonl", "--config", cfg, "--checkpoint", ws / "m.ckpt", "--out", ws / "p.jsonl") == 0
    first = json.loads((ws / "p.jsonl").read_text().splitlines()[0])
    assert set(first) == {"image_id", "tuples"} and len(first["tuples"][0]) == 6
    assert run("eval", ws / "p.jsonl", ws / "train.jsonl", "--config", cfg, "--k", "5,50", "--report", ws / "r.tsv") == 0
    out = capsys.readouterr().out
    assert "R@5\tmacro" in out and "R@50\tmacro" in out
    assert (ws / "r.tsv").read_text().splitlines()[0] == "image_id\tn_gt\tR@5\tR@50"


def test_flags_override_config(workspace):
    ws, _, _ = workspace
    cfg = ws / "run.toml"
    assert run("train", ws / "train.jsonl", "--config", cfg, "--steps", 1, "--nt", 0, "--no-sequential",
               "--out", ws / "m.ckpt", "--trace", ws / "t.csv") == 0
    assert (ws / "t.csv").read_text().splitlines()[0].startswith("step,grd,det_0,relsub")
    # the checkpoint has one detection head, so a config with two does not load
    assert run("infer", ws / "train.jsonl", "--config", cfg, "--checkpoint", ws / "m.ckpt", "--out", ws / "p.jsonl") == 1


def test_parse_gtgraph_and_stats(workspace, capsys):
    ws, vocab, records = workspace
    caps = ws / "caps.jsonl"
    caps.write_text(json.dumps({"image_id": "a", "captions": ["person riding a horse", "a person wearing a hat"]}) + "\n")
    cfg = ws / "run.toml"
    assert run("parse", caps, "--config", cfg, "--out", ws / "cap.graphs") == 0
    rec = json.loads((ws / "cap.graphs").read_text())
    # captions are parsed separately and concatenated
    assert rec["image_id"] == "a" and rec["entities"] == ["person", "horse", "person", "hat"]
    assert rec["relations"] == [["ride", 0, 1], ["wear", 2, 3]]
    assert run("gtgraph", ws / "train.jsonl", "--config", cfg, "--out", ws / "gt.graphs") == 0
    assert len((ws / "gt.graphs").read_text().splitlines()) == len(records)
    capsys.readouterr()
    assert run("stats", ws / "gt.graphs", ws / "cap.graphs", "--config", cfg, "--out", ws / "h.csv") == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].startswith("relation\t") and len(table) == 1 + vocab.n_relations
    assert (ws / "h.csv.0").exists() and (ws / "h.csv.1").read_text().startswith("class,count,fraction")


def test_input_errors_exit_one(workspace, capsys):
    ws, _, _ = workspace
    assert run("train", ws / "train.jsonl", "--steps", 1, "--out", ws / "m.ckpt") == 1
    assert run("train", ws / "missing.jsonl", "--config", ws / "run.toml", "--steps", 1, "--out", ws / "m.ckpt") == 1
    (ws / "junk.ckpt").write_bytes(b"nope")
    assert run("infer", ws / "train.jsonl", "--config", ws / "run.toml", "--checkpoint", ws / "junk.ckpt",
               "--out", ws / "p.jsonl") == 1
    assert "input error" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_two(workspace, capsys):
    ws, _, _ = workspace
    cfg = ws / "run.toml"
    # an absurd step size overflows the stacked context layers within a few steps
    cfg.write_text(cfg.read_text().replace("lr = 0.01", "lr = 1e300"))
    code = run("train", ws / "train.jsonl", "--config", cfg, "--steps", 5, "--out", ws / "m.ckpt")
    assert code == 2
    assert "non-finite" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out
    assert "all suites pass" in out and "FAIL" not in out
