import json
import os

import numpy as np
import pytest

from multimod.cli import main
from multimod.metrics import read_attention

TINY = dict(dim=8, heads=2, vision_layers=1, text_layers=1, universal_layers=1,
            fusion_layers=1, decoder_layers=1, num_queries=4, num_concepts=4,
            samples_per_split=12, frames=2, total_steps=4, eval_interval=2,
            batch_size=4, warmup_steps=1, queue_size=4, eval_pairs=4,
            max_gen_len=4, beam_size=2)


def write_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def test_gen_corpus_deterministic(tmp_path, capsys):
    out1, out2 = tmp_path / "c1", tmp_path / "c2"
    assert main(["gen-corpus", "--seed", "7", "--out", str(out1),
                 "--num-concepts", "4", "--samples-per-split", "6"]) == 0
    assert main(["gen-corpus", "--seed", "7", "--out", str(out2),
                 "--num-concepts", "4", "--samples-per-split", "6"]) == 0
    b1 = (out1 / "corpus.json").read_bytes()
    assert b1 == (out2 / "corpus.json").read_bytes()


def test_compose_prints_graph(capsys):
    assert main(["compose", "imageClassification"]) == 0
    out = capsys.readouterr().out
    assert "modules: imageEncoder, universalLayers" in out


def test_compose_unknown_task_exit_code_1(capsys):
    assert main(["compose", "nonsenseTask"]) == 1
    assert "valid tasks" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_run")
    cfg_path = write_config(tmp_path)
    out = tmp_path / "run"
    code = main(["train", "--config", cfg_path, "--seed", "3", "--out", str(out)])
    assert code == 0
    return tmp_path, out


def test_train_writes_artifacts(trained_run):
    _, out = trained_run
    assert (out / "checkpoint.bin").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "losses.png").exists()
    assert (out / "alignment.png").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,loss_total,loss_mlm,loss_vlc,loss_vlm,loss_ilm,lr,gap,r1_i2t,r1_t2i"


def test_eval_retrieval_subcommand(trained_run, capsys):
    _, out = trained_run
    assert main(["eval", "--task", "imageRetrieval", "--ckpt", str(out / "checkpoint.bin")]) == 0
    stdout = capsys.readouterr().out
    assert "r1_i2t" in stdout and "r10_t2i" in stdout


def test_eval_generation_subcommand(trained_run, capsys):
    _, out = trained_run
    assert main(["eval", "--task", "videoCaptioning", "--ckpt", str(out / "checkpoint.bin")]) == 0
    assert "tokens:" in capsys.readouterr().out


def test_gap_subcommand(trained_run, capsys):
    _, out = trained_run
    assert main(["gap", "--ckpt", str(out / "checkpoint.bin")]) == 0
    line = capsys.readouterr().out
    assert line.startswith("modality_gap:")
    assert float(line.split(":")[1]) >= 0.0


def test_export_attn_subcommand(trained_run, capsys):
    tmp_path, out = trained_run
    dst = tmp_path / "attn.txt"
    assert main(["export-attn", "--ckpt", str(out / "checkpoint.bin"),
                 "--layer", "0", "--sample", "1", "--out", str(dst)]) == 0
    weights = read_attention(str(dst))
    assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-10)


def test_export_attn_bad_layer_exit_1(trained_run, capsys):
    tmp_path, out = trained_run
    assert main(["export-attn", "--ckpt", str(out / "checkpoint.bin"),
                 "--layer", "9", "--sample", "0", "--out", str(tmp_path / "x.txt")]) == 1


def test_resume_from_cli(trained_run, tmp_path):
    run_tmp, out = trained_run
    cfg_path = write_config(tmp_path)
    out2 = tmp_path / "resumed"
    code = main(["train", "--config", cfg_path, "--seed", "3", "--out", str(out2),
                 "--resume", str(out / "checkpoint.bin")])
    assert code == 0


def test_gradcheck_primitives_subcommand(capsys):
    assert main(["gradcheck", "--module", "primitives"]) == 0
    assert "primitives" in capsys.readouterr().out


def test_gradcheck_unknown_module(capsys):
    assert main(["gradcheck", "--module", "warpdrive"]) == 1
