import io
import json
from pathlib import Path

import pytest

from todpipe.cli import EXIT_CONFIG, EXIT_IO, EXIT_MISSING, EXIT_OK, load_config, main
from todpipe.errors import ConfigError


def write_config(tmp_path: Path, **overrides) -> Path:
    doc = {
        "corpus": str(tmp_path / "corpus.jsonl"),
        "out": str(tmp_path / "out"),
        "synthetic": {"n_labeled": 30, "n_unlabeled": 20, "n_entities_per_kb": 2,
                      "label_noise_rate": 0.0, "seed": 5},
        "encoder": {"d": 24, "epochs": 1, "batch_size": 32, "seed": 1},
        "classifier": {"epochs": 8, "batch_size": 32, "seed": 2},
        "weak": {"student_epochs": 1, "finetune_epochs": 4, "seed": 3},
        "lm": {"d_model": 16, "n_layers": 1, "n_heads": 2, "epochs": 1,
               "max_sequences": 120, "seed": 4},
        "generation": {"beam_size": 2, "max_len": 32},
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_help_exits_zero_for_every_subcommand(capsys):
    for sub in ("gen-data", "pretrain", "pipeline", "evaluate", "chat"):
        with pytest.raises(SystemExit) as exit_info:
            main([sub, "--help"])
        assert exit_info.value.code == 0
        out = capsys.readouterr().out
        assert "--config" in out and "--seed" in out


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"banana": 1}', encoding="utf-8")
    assert main(["gen-data", "--config", str(path)]) == EXIT_CONFIG


def test_unknown_section_key_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"synthetic": {"n_labeled": 1, "n_unlabeled": 0, "oops": 2}}',
                    encoding="utf-8")
    assert main(["gen-data", "--config", str(path)]) == EXIT_CONFIG


def test_missing_config_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["gen-data", "--config", str(missing)]) == EXIT_CONFIG
    assert str(missing) in capsys.readouterr().err


def test_gen_data_writes_corpus(tmp_path):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert (tmp_path / "corpus.jsonl").exists()


def test_gen_data_empty_counts_ok(tmp_path):
    config = write_config(tmp_path, synthetic={"n_labeled": 0, "n_unlabeled": 0,
                                               "seed": 0})
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert (tmp_path / "corpus.jsonl").read_text(encoding="utf-8") == ""


def test_gen_data_bad_rate_exits_config(tmp_path):
    config = write_config(tmp_path, synthetic={"n_labeled": 1, "n_unlabeled": 0,
                                               "label_noise_rate": 2.0, "seed": 0})
    assert main(["gen-data", "--config", str(config)]) == EXIT_CONFIG


def test_pipeline_missing_corpus_exits_io(tmp_path):
    config = write_config(tmp_path)
    assert main(["pipeline", "--config", str(config)]) == EXIT_IO


def test_pretrain_writes_encoder_checkpoint(tmp_path):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert main(["pretrain", "--config", str(config)]) == EXIT_OK
    from todpipe.encoder import load_encoder

    params, vocab = load_encoder(tmp_path / "out" / "encoder.ckpt")
    assert params.d == 24 and len(vocab) > 10


def test_skip_pretrain_leaves_encoder_at_init(tmp_path):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert main(["pretrain", "--config", str(config)]) == EXIT_OK
    trained = (tmp_path / "out" / "encoder.ckpt").read_bytes()
    assert main(["pretrain", "--config", str(config), "--skip-pretrain"]) == EXIT_OK
    skipped = (tmp_path / "out" / "encoder.ckpt").read_bytes()
    assert trained != skipped


def test_pipeline_skip_pretrain_completes(tmp_path):
    config = write_config(tmp_path, synthetic={"n_labeled": 20, "n_unlabeled": 10,
                                               "n_entities_per_kb": 2,
                                               "label_noise_rate": 0.0, "seed": 6})
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert main(["pipeline", "--config", str(config), "--skip-pretrain"]) == EXIT_OK
    assert (tmp_path / "out" / "metrics.json").exists()


def test_seed_override_fans_out(tmp_path):
    config_path = write_config(tmp_path)
    config = load_config(str(config_path), overrides={"seed": 100})
    assert config.synthetic.seed == 100
    assert config.encoder.seed == 101
    assert config.classifier.seed == 102
    assert config.weak.seed == 103
    assert config.lm.seed == 104


@pytest.fixture(scope="module")
def pipeline_artifacts(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_pipeline")
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert main(["pipeline", "--config", str(config)]) == EXIT_OK
    return tmp_path, config


def test_pipeline_writes_artifacts(pipeline_artifacts):
    tmp_path, _ = pipeline_artifacts
    out = tmp_path / "out"
    for name in ("encoder.ckpt", "student.ckpt", "lm.ckpt", "provenance.json",
                 "predictions.jsonl", "predictions_oracle.jsonl",
                 "metrics.json", "metrics.txt"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    assert 0.0 <= metrics["ui"]["f1"] <= 1.0
    assert "success_rate_oracle" in metrics


def test_evaluate_runs_on_pipeline_outputs(pipeline_artifacts, capsys):
    _, config = pipeline_artifacts
    assert main(["evaluate", "--config", str(config)]) == EXIT_OK
    assert "UI-F1" in capsys.readouterr().out


def test_evaluate_gold_predictions_are_perfect(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    from todpipe.corpus import load_corpus

    split = load_corpus(tmp_path / "corpus.jsonl")
    records = []
    for dialog in split.test:
        for turn in dialog.turns:
            records.append({
                "dialog_id": dialog.dialog_id, "turn_index": turn.turn_index,
                "ui": sorted(turn.user_intents), "si_pre": sorted(turn.service_intents),
                "slots": [list(p) for p in turn.slot_labels],
                "response": turn.system_response,
            })
    out = tmp_path / "out"
    out.mkdir(exist_ok=True)
    (out / "predictions.jsonl").write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8")
    assert main(["evaluate", "--config", str(config)]) == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    assert metrics["ui"]["f1"] == 1.0
    assert metrics["bleu4"] == 100.0


def test_evaluate_mismatched_counts_exits_config(tmp_path):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    out = tmp_path / "out"
    out.mkdir(exist_ok=True)
    (out / "predictions.jsonl").write_text(
        '{"dialog_id": "test-00000", "turn_index": 0, "ui": [], "si_pre": [], '
        '"slots": [], "response": ""}\n', encoding="utf-8")
    assert main(["evaluate", "--config", str(config)]) == EXIT_CONFIG


def test_evaluate_missing_predictions_exits_io(tmp_path):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert main(["evaluate", "--config", str(config)]) == EXIT_IO


def test_chat_missing_checkpoint_exits_missing(tmp_path):
    config = write_config(tmp_path)
    assert main(["gen-data", "--config", str(config)]) == EXIT_OK
    assert main(["chat", "--config", str(config)]) == EXIT_MISSING


def test_chat_quit_immediately(pipeline_artifacts, monkeypatch):
    _, config = pipeline_artifacts
    monkeypatch.setattr("sys.stdin", io.StringIO(":quit\n"))
    assert main(["chat", "--config", str(config)]) == EXIT_OK


def test_chat_kb_and_response(pipeline_artifacts, monkeypatch, capsys):
    tmp_path, config = pipeline_artifacts
    from todpipe.corpus import load_corpus

    split = load_corpus(tmp_path / "corpus.jsonl")
    dialog = split.test[0]
    entity = dialog.local_kb.entities[0]
    monkeypatch.setattr("sys.stdin",
                        io.StringIO(f":kb\n{entity.name}的月费是多少\n:quit\n"))
    assert main(["chat", "--config", str(config)]) == EXIT_OK
    out = capsys.readouterr().out
    assert entity.name in out
    assert "->" in out
    # the fee question about a named entity answers with the exact KB value
    assert entity.attributes["月费"] in out
