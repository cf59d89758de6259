import json

import pytest

from dialoglow import cli, synthetic
from dialoglow.corpus import serialize_dataset

CONFIG = """\
[model]
embed_dim = 8
hidden_size = 4
window_size = 4
fc_dims = 8

[train]
epochs = 2
lr0 = 0.01
dropout = 0.0
seed = 3
val_fraction = 0.25
"""


def write_corpus(tmp_path, n=6, seed=0, name="train.json"):
    ds = synthetic.build(n_dialogues=n, seed=seed)
    p = tmp_path / name
    p.write_text(json.dumps(serialize_dataset(ds)), encoding="utf-8")
    return p


def write_config(tmp_path, text=CONFIG):
    p = tmp_path / "run.cfg"
    p.write_text(text, encoding="utf-8")
    return p


def run_train(tmp_path, out="run", extra=()):
    data = write_corpus(tmp_path)
    cfg = write_config(tmp_path)
    argv = ["train", str(data), "--out", str(tmp_path / out), "--config", str(cfg), "--quiet"]
    rc = cli.main(argv + list(extra))
    return rc, tmp_path / out


# --- preprocess ---------------------------------------------------------------


def test_preprocess_writes_vocab_encoded_and_stats(tmp_path, capsys):
    data = write_corpus(tmp_path)
    out = tmp_path / "prep"
    assert cli.main(["preprocess", str(data), "--out", str(out)]) == 0
    assert (out / "vocab.txt").exists()
    stats = json.loads((out / "stats.json").read_text())
    encoded = json.loads((out / "encoded.json").read_text())
    assert stats["dialogues"] == 6
    assert stats["utterances"] == sum(
        len(d["utterances"]) for d in encoded["dialogues"]
    )
    assert set(stats["label_histogram"]) == {
        "neutral", "joy", "sadness", "anger", "fear", "surprise", "disgust", "non-neutral",
    }
    assert encoded["config"]["version"]
    first = encoded["dialogues"][0]["utterances"][0]
    assert set(first) == {"speaker", "gold", "token_ids"}
    assert all(isinstance(i, int) for i in first["token_ids"])
    assert "unique tokens" in capsys.readouterr().out


def test_preprocess_reruns_byte_identical(tmp_path):
    data = write_corpus(tmp_path)
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["preprocess", str(data), "--out", str(out)]) == 0
        blobs.append(
            tuple((out / f).read_bytes() for f in ("vocab.txt", "encoded.json", "stats.json"))
        )
    assert blobs[0] == blobs[1]


def test_preprocess_missing_file_exits_2_naming_it(tmp_path, capsys):
    rc = cli.main(["preprocess", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "absent.json" in capsys.readouterr().err


def test_data_dir_env_var_resolves_relative_inputs(tmp_path, monkeypatch, capsys):
    write_corpus(tmp_path, name="corpus.json")
    monkeypatch.setenv("DIALOGLOW_DATA_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path / ".." if (tmp_path / "..").exists() else tmp_path)
    out = tmp_path / "viaenv"
    assert cli.main(["preprocess", "corpus.json", "--out", str(out)]) == 0
    assert (out / "stats.json").exists()


# --- train ----------------------------------------------------------------


def test_train_writes_checkpoint_history_and_vocab(tmp_path):
    rc, out = run_train(tmp_path)
    assert rc == 0
    assert (out / "checkpoint.bin").exists()
    assert (out / "vocab.txt").exists()
    history = json.loads((out / "history.json").read_text())
    assert history["version"]
    assert history["config"]["model"]["hidden_size"] == 4
    assert history["config"]["train"]["lr0"] == 0.01
    assert len(history["history"]) == 2
    assert history["history"][1]["lr"] == 0.01 * 0.99


def test_train_prints_epoch_rows_unless_quiet(tmp_path, capsys):
    data = write_corpus(tmp_path)
    cfg = write_config(tmp_path)
    rc = cli.main(["train", str(data), "--out", str(tmp_path / "loud"), "--config", str(cfg)])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert sum(1 for l in lines if l.startswith("epoch ")) == 2
    assert any("UWA" in l for l in lines)


def test_train_flags_override_config_file(tmp_path):
    rc, out = run_train(tmp_path, extra=["--epochs", "1", "--seed", "9"])
    assert rc == 0
    history = json.loads((out / "history.json").read_text())
    assert len(history["history"]) == 1
    assert history["config"]["train"]["seed"] == 9


def test_train_same_seed_twice_is_bit_identical(tmp_path):
    _, out_a = run_train(tmp_path, out="a")
    _, out_b = run_train(tmp_path, out="b")
    for name in ("checkpoint.bin", "history.json", "vocab.txt"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_train_rejects_unknown_config_keys(tmp_path, capsys):
    data = write_corpus(tmp_path)
    cfg = write_config(tmp_path, CONFIG + "banana = 4\n")
    rc = cli.main(["train", str(data), "--out", str(tmp_path / "x"), "--config", str(cfg)])
    assert rc == 2
    assert "banana" in capsys.readouterr().err


def test_train_inverse_frequency_weights_flag(tmp_path):
    rc, out = run_train(tmp_path, extra=["--class-weights", "inverse-frequency"])
    assert rc == 0
    weights = json.loads((out / "history.json").read_text())["config"]["train"]["class_weights"]
    assert weights[4:] == [0.0, 0.0, 0.0, 0.0]
    assert all(w > 0 for w in weights[:4])


# --- eval -------------------------------------------------------------------


def test_eval_prints_table_and_writes_report(tmp_path, capsys):
    rc, out = run_train(tmp_path)
    capsys.readouterr()  # drop the training chatter
    data = tmp_path / "train.json"
    report_path = tmp_path / "report.json"
    rc = cli.main(
        ["eval", str(out / "checkpoint.bin"), str(data), "--out", str(report_path)]
    )
    assert rc == 0
    head = capsys.readouterr().out.splitlines()[0].split()
    assert head == ["WA", "UWA", "Neutral", "Joy", "Sadness", "Anger"]
    blob = json.loads(report_path.read_text())
    assert set(blob) == {"config", "report", "version"}
    assert set(blob["report"]) == {"wa", "uwa", "per_class", "confusion", "ignored"}
    assert blob["config"]["model"]["variant"] == "sa-bilstm"


def test_eval_refuses_mismatched_vocab(tmp_path, capsys):
    rc, out = run_train(tmp_path)
    vocab_file = out / "vocab.txt"
    vocab_file.write_text(vocab_file.read_text() + "sneaky\n")
    rc = cli.main(["eval", str(out / "checkpoint.bin"), str(tmp_path / "train.json")])
    assert rc == 2
    assert "hash mismatch" in capsys.readouterr().err


def test_eval_empty_scored_set_is_an_error(tmp_path, capsys):
    rc, out = run_train(tmp_path)
    unscored = [[{"speaker": "a", "utterance": "whoa okay", "emotion": "surprise"}]]
    bad = tmp_path / "unscored.json"
    bad.write_text(json.dumps(unscored))
    rc = cli.main(["eval", str(out / "checkpoint.bin"), str(bad)])
    assert rc == 2
    assert "zero scored" in capsys.readouterr().err


# --- predict ----------------------------------------------------------------


def test_predict_annotates_preserving_schema_and_order(tmp_path):
    rc, out = run_train(tmp_path)
    dialogues = [
        [
            {"speaker": "ann", "utterance": "so glad today", "emotion": "joy", "extra": 7},
            {"speaker": "bob", "utterance": "okay right"},
        ],
        [],
        [{"speaker": "cay", "utterance": "completely unseen words"}],
    ]
    inp = tmp_path / "in.json"
    inp.write_text(json.dumps(dialogues))
    dest = tmp_path / "pred.json"
    rc = cli.main(["predict", str(out / "checkpoint.bin"), str(inp), "--out", str(dest)])
    assert rc == 0
    got = json.loads(dest.read_text())
    assert len(got) == 3 and got[1] == []
    first = got[0][0]
    assert first["speaker"] == "ann" and first["extra"] == 7 and first["emotion"] == "joy"
    assert first["predicted_emotion"] in ("neutral", "joy", "sadness", "anger")
    assert set(got[0][1]) == {"speaker", "utterance", "predicted_emotion"}
    meta = json.loads((tmp_path / "pred.json.meta.json").read_text())
    assert meta["version"] and meta["config"]["model"]["embed_dim"] == 8


def test_predict_is_idempotent(tmp_path):
    rc, out = run_train(tmp_path)
    inp = tmp_path / "in.json"
    inp.write_text(json.dumps([[{"speaker": "a", "utterance": "glad glad glad"}]]))
    blobs = []
    for name in ("p1.json", "p2.json"):
        dest = tmp_path / name
        assert cli.main(["predict", str(out / "checkpoint.bin"), str(inp), "--out", str(dest)]) == 0
        blobs.append(dest.read_bytes())
    assert blobs[0] == blobs[1]


def test_predict_rejects_structural_garbage(tmp_path, capsys):
    rc, out = run_train(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"not": "a list"}))
    rc = cli.main(["predict", str(out / "checkpoint.bin"), str(bad)])
    assert rc == 2
    assert "top-level array" in capsys.readouterr().err


def test_predict_stdout_mode_prints_pure_json(tmp_path, capsys):
    rc, out = run_train(tmp_path)
    capsys.readouterr()  # drop the training chatter
    inp = tmp_path / "in.json"
    inp.write_text(json.dumps([[{"speaker": "a", "utterance": "livid now"}]]))
    rc = cli.main(["predict", str(out / "checkpoint.bin"), str(inp)])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc[0][0]["predicted_emotion"]


# --- gradcheck / misc ---------------------------------------------------------


def test_gradcheck_passes_default_tolerance(capsys):
    assert cli.main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "ok" in out


def test_gradcheck_fails_on_unreachable_tolerance(capsys):
    assert cli.main(["gradcheck", "--tolerance", "1e-18"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "dialoglow" in capsys.readouterr().out
