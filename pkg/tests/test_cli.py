"""End-to-end command line pipeline on a miniature configuration, plus the
CLI error contract."""

import json
import os
import re
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from rgfusion import config as cfgmod

TINY_CFG = {
    "corpus": {"n_train": 24, "n_test": 8, "vocab_size": 12, "seq_len_min": 2,
               "seq_len_max": 4, "frames_per_token": 2, "audio_dim": 4,
               "video_dim": 4, "video_classes": 4},
    "router": {"dim": 8, "layers": 1, "heads": 2, "ffn_hidden": 16,
               "patch_len": 2, "critic_hidden": 8},
    "fusion": {"dim": 16, "enc_layers": 1, "dec_layers": 1, "heads": 2,
               "ffn_hidden": 32},
    "pretrain": {"steps": 20},
    "finetune": {"steps": 25},
    "eval": {"snrs_db": [0.0]},
}

TIMESTAMP = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2} ")


def run_cli(*args, env_extra=None, expect=0):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run([sys.executable, "-m", "rgfusion", *args],
                          capture_output=True, text=True, env=env)
    if expect is not None:
        assert proc.returncode == expect, (
            f"rgfusion {' '.join(args)} -> {proc.returncode}\n"
            f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
        )
    return proc


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """One full pipeline run: data, router, two recognizers, reports."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_CFG))
    data = root / "data"
    data2 = root / "data_again"
    run = root / "run"
    run2 = root / "run_again"

    run_cli("gen-data", "--config", str(cfg), "--out", str(data))
    run_cli("gen-data", "--config", str(cfg), "--out", str(data2))
    run_cli("pretrain-router", "--config", str(cfg), "--out", str(run),
            "--corpus", str(data))
    router = run / "router.rgfr"
    for variant in ("ours", "self_attn"):
        run_cli("finetune", "--config", str(cfg), "--out", str(run),
                "--corpus", str(data), "--router", str(router),
                "--variant", variant, "--condition", "clean")
    run_cli("finetune", "--config", str(cfg), "--out", str(run2),
            "--corpus", str(data), "--router", str(router),
            "--variant", "ours", "--condition", "clean")
    run_cli("eval", "--config", str(cfg), "--out", str(run),
            "--corpus", str(data), "--router", str(router),
            "--model", f"ours={run / 'model_ours_clean.rgfm'}",
            "--model", f"self_attn={run / 'model_self_attn_clean.rgfm'}")
    run_cli("sweep-scores", "--config", str(cfg), "--out", str(run),
            "--corpus", str(data), "--router", str(router))
    return {"cfg": cfg, "data": data, "data2": data2, "run": run, "run2": run2}


# ---------------------------------------------------------------- pipeline


def test_gen_data_outputs(ws):
    assert (ws["data"] / "corpus_train.rgfc").exists()
    assert (ws["data"] / "corpus_test.rgfc").exists()
    resolved = json.loads((ws["data"] / "resolved_config.json").read_text())
    assert resolved == cfgmod.resolve(TINY_CFG)
    log_lines = (ws["data"] / "run.log").read_text().splitlines()
    assert log_lines
    assert all(TIMESTAMP.match(line) for line in log_lines)


def test_gen_data_reproducible(ws):
    for name in ("corpus_train.rgfc", "corpus_test.rgfc"):
        assert (ws["data"] / name).read_bytes() == (ws["data2"] / name).read_bytes()


def test_pretrain_outputs(ws):
    from rgfusion.router import load_router

    resolved = cfgmod.resolve(TINY_CFG)
    model = load_router(ws["run"] / "router.rgfr",
                        expect=cfgmod.router_config(resolved))
    assert model.cfg.dim == 8
    curve = (ws["run"] / "pretrain_curve.csv").read_text().splitlines()
    assert curve[0] == "step,loss_total,loss_c,loss_r,loss_adv"
    assert len(curve) == 1 + TINY_CFG["pretrain"]["steps"]


def test_finetune_outputs_and_reproducibility(ws):
    model = ws["run"] / "model_ours_clean.rgfm"
    again = ws["run2"] / "model_ours_clean.rgfm"
    assert model.read_bytes() == again.read_bytes()
    c1 = (ws["run"] / "finetune_ours_clean.csv").read_text()
    c2 = (ws["run2"] / "finetune_ours_clean.csv").read_text()
    assert c1 == c2
    assert c1.splitlines()[0] == "step,ce,token_acc"
    assert len(c1.splitlines()) == 1 + TINY_CFG["finetune"]["steps"]
    assert (ws["run"] / "model_self_attn_clean.rgfm").exists()


def test_eval_report_files(ws):
    lines = (ws["run"] / "report.csv").read_text().splitlines()
    assert lines[0] == "model,noise_type,snr_db,n_utterances,wer,mean_s_v,rerr_vs_baseline"
    n_conditions = 1 + 3 * len(TINY_CFG["eval"]["snrs_db"])
    assert len(lines) == 1 + 2 * n_conditions
    for row in lines[1:]:
        cells = row.split(",")
        if cells[0] == "self_attn":
            assert cells[6] == ""     # the baseline has no RERR against itself
            assert cells[5] == ""     # and consults no router
    md = (ws["run"] / "report.md").read_text()
    assert md.startswith("| model |")
    assert "self_attn" in md


def test_sweep_outputs(ws):
    lines = (ws["run"] / "score_sweep.csv").read_text().splitlines()
    n_rows = 3 * (1 + len(TINY_CFG["eval"]["snrs_db"]))
    assert len(lines) == 1 + n_rows
    svg = (ws["run"] / "score_sweep.svg").read_text()
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")


def test_ablate_full_matrix(ws, tmp_path):
    out = tmp_path / "ablation"
    run_cli("ablate", "--config", str(ws["cfg"]), "--out", str(out),
            "--corpus", str(ws["data"]), "--router",
            str(ws["run"] / "router.rgfr"), env_extra={"RGF_THREADS": "2"})
    for condition in ("clean", "noisy"):
        for variant in ("ours", "sa", "l2", "self_attn"):
            assert (out / f"model_{variant}_{condition}.rgfm").exists()
        assert (out / f"ablation_{condition}.csv").exists()
    md = (out / "ablation.md").read_text()
    assert "## fine-tuned on clean data" in md
    assert "## fine-tuned on noisy data" in md
    counts = re.findall(r"(\w+)=(\d+)", md.split("parameter counts:")[1]
                        .splitlines()[0])
    assert len(counts) == 4
    # every ablation is a drop-in: identical parameter budget
    assert len({int(n) for _, n in counts}) == 1


def test_eval_baseline_falls_back_to_first_model(ws, tmp_path):
    out = tmp_path / "solo"
    run_cli("eval", "--config", str(ws["cfg"]), "--out", str(out),
            "--corpus", str(ws["data"]),
            "--router", str(ws["run"] / "router.rgfr"),
            "--model", f"ours={ws['run'] / 'model_ours_clean.rgfm'}")
    lines = (out / "report.csv").read_text().splitlines()
    assert all(row.split(",")[6] == "" for row in lines[1:])


def test_gradcheck_command():
    proc = run_cli("gradcheck")
    assert "PASS" in proc.stdout
    assert "FAIL" not in proc.stdout


# ------------------------------------------------------------ error contract


def test_missing_config(tmp_path):
    proc = run_cli("gen-data", "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o"), expect=2)
    assert "error: config-missing" in proc.stderr


def test_invalid_config_lists_every_violation(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"corpus": {"n_train": "many"},
                               "routerz": {}, "seed": 1.5}))
    proc = run_cli("gen-data", "--config", str(cfg),
                   "--out", str(tmp_path / "o"), expect=2)
    assert "error: config-invalid" in proc.stderr
    assert "3 violation(s)" in proc.stderr
    assert "corpus.n_train" in proc.stderr
    assert "routerz" in proc.stderr


def test_unparseable_config(tmp_path):
    cfg = tmp_path / "syntax.json"
    cfg.write_text("{,}")
    proc = run_cli("gen-data", "--config", str(cfg),
                   "--out", str(tmp_path / "o"), expect=2)
    assert "invalid JSON" in proc.stderr


def test_missing_corpus(ws, tmp_path):
    proc = run_cli("pretrain-router", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"),
                   "--corpus", str(tmp_path), expect=2)
    assert "error: corpus-missing" in proc.stderr


def test_corrupt_corpus_magic(ws, tmp_path):
    blob = bytearray((ws["data"] / "corpus_train.rgfc").read_bytes())
    blob[:4] = b"ABCD"
    bad_dir = tmp_path / "bad"
    bad_dir.mkdir()
    (bad_dir / "corpus_train.rgfc").write_bytes(bytes(blob))
    proc = run_cli("pretrain-router", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"),
                   "--corpus", str(bad_dir), expect=2)
    assert "error: corpus-format" in proc.stderr


def test_missing_router_checkpoint(ws, tmp_path):
    missing = tmp_path / "ghost.rgfr"
    proc = run_cli("finetune", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"), "--corpus", str(ws["data"]),
                   "--router", str(missing), expect=2)
    assert "error: checkpoint-missing" in proc.stderr
    assert str(missing) in proc.stderr


def test_missing_model_checkpoint(ws, tmp_path):
    missing = tmp_path / "ghost.rgfm"
    proc = run_cli("eval", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"), "--corpus", str(ws["data"]),
                   "--router", str(ws["run"] / "router.rgfr"),
                   "--model", f"ours={missing}", expect=2)
    assert "error: checkpoint-missing" in proc.stderr
    assert str(missing) in proc.stderr


def test_bad_model_arg(ws, tmp_path):
    proc = run_cli("eval", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"), "--corpus", str(ws["data"]),
                   "--router", str(ws["run"] / "router.rgfr"),
                   "--model", "just_a_path.rgfm", expect=2)
    assert "error: bad-argument" in proc.stderr


def test_unknown_variant_arg(ws, tmp_path):
    proc = run_cli("eval", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"), "--corpus", str(ws["data"]),
                   "--router", str(ws["run"] / "router.rgfr"),
                   "--model", f"vit={ws['run'] / 'model_ours_clean.rgfm'}",
                   expect=2)
    assert "error: bad-argument" in proc.stderr


def test_eval_requires_a_model(ws, tmp_path):
    proc = run_cli("eval", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"), "--corpus", str(ws["data"]),
                   "--router", str(ws["run"] / "router.rgfr"), expect=2)
    assert "error: bad-argument" in proc.stderr


def test_wrong_architecture_checkpoint(ws, tmp_path):
    """A checkpoint trained under one architecture is refused under another."""
    other = dict(TINY_CFG)
    other["router"] = dict(TINY_CFG["router"], dim=16)
    cfg = tmp_path / "other.json"
    cfg.write_text(json.dumps(other))
    proc = run_cli("finetune", "--config", str(cfg),
                   "--out", str(tmp_path / "o"), "--corpus", str(ws["data"]),
                   "--router", str(ws["run"] / "router.rgfr"), expect=2)
    assert "error: checkpoint-invalid" in proc.stderr


def test_bad_thread_count(ws, tmp_path):
    proc = run_cli("ablate", "--config", str(ws["cfg"]),
                   "--out", str(tmp_path / "o"), "--corpus", str(ws["data"]),
                   "--router", str(ws["run"] / "router.rgfr"),
                   env_extra={"RGF_THREADS": "0"}, expect=2)
    assert "error: bad-argument" in proc.stderr


def test_help_lists_commands():
    proc = run_cli("--help")
    for cmd in ("gen-data", "pretrain-router", "finetune", "eval",
                "sweep-scores", "ablate", "gradcheck"):
        assert cmd in proc.stdout
