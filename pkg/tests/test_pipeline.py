"""Stage orchestration: hashing, stamps, resume, artifacts, sweep, CLI."""
import csv
import dataclasses
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fakeloc import RunConfig
from fakeloc import pipeline
from fakeloc.cli import main as cli_main
from fakeloc.manifest import read_manifest
from fakeloc.mining import read_mining_report
from fakeloc.pipeline import (
    Workspace,
    corpus_samples,
    ensemble_hash,
    eval_hash,
    mine_hash,
    pseudo_hash,
    resolve_z,
    run_retrain_eval,
    run_sweep,
    run_synth,
    run_train_experts,
    split_target_ids,
    synth_hash,
)


def tiny_config(out: Path, **kw) -> RunConfig:
    base = dict(
        output_dir=str(out),
        seed=11,
        n_source=12,
        n_target=14,
        n_experts=2,
        context=1,
        hidden_dims=(8,),
        latent_dim=8,
        epochs=2,
        accuracy_floor=0.0,
        z_fraction=0.25,
        strategy="sde",
        retrain_epochs=2,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One tiny end-to-end run shared by the artifact assertions below."""
    out = tmp_path_factory.mktemp("e2e")
    cfg = tiny_config(out)
    metrics = run_retrain_eval(cfg)
    return cfg, Workspace(cfg.output_dir), metrics


# --- config -----------------------------------------------------------------


def test_runconfig_dict_roundtrip(tmp_path):
    cfg = tiny_config(tmp_path, hidden_dims=(8, 4), source_overrides={"fake_ratio": 0.5})
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
    assert RunConfig.from_file(path) == cfg


def test_runconfig_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ValueError, match="unknown config keys"):
        RunConfig.from_dict({"not_a_key": 1})
    with pytest.raises(ValueError, match="strategy"):
        RunConfig(strategy="bogus")
    with pytest.raises(ValueError, match="embedding"):
        RunConfig(embedding="spectral")
    with pytest.raises(ValueError):
        RunConfig(z=-1)
    with pytest.raises(ValueError):
        RunConfig(z_fraction=1.5)
    with pytest.raises(ValueError):
        RunConfig(target_candidate_fraction=1.0)


def test_stage_hashes_track_their_inputs(tmp_path):
    ws = Workspace(tmp_path)
    cfg = tiny_config(tmp_path)
    assert synth_hash(cfg) != synth_hash(dataclasses.replace(cfg, n_source=13))
    assert synth_hash(cfg) != synth_hash(dataclasses.replace(cfg, seed=12))
    # ensemble hash reacts to training knobs but not to mining ones
    assert ensemble_hash(cfg, ws) != ensemble_hash(dataclasses.replace(cfg, u=0.5), ws)
    assert ensemble_hash(cfg, ws) == ensemble_hash(dataclasses.replace(cfg, strategy="random"), ws)
    # mining hash reacts to the strategy but not to swap knobs
    assert mine_hash(cfg, ws) != mine_hash(dataclasses.replace(cfg, strategy="random"), ws)
    assert mine_hash(cfg, ws) == mine_hash(dataclasses.replace(cfg, k_sigma=2.0), ws)
    assert pseudo_hash(cfg, ws) != pseudo_hash(dataclasses.replace(cfg, k_sigma=2.0), ws)
    assert eval_hash(cfg, ws) != eval_hash(dataclasses.replace(cfg, retrain_epochs=1), ws)


def test_resolve_z_prefers_explicit_over_fraction(tmp_path):
    cfg = tiny_config(tmp_path, z=3, z_fraction=0.9)
    assert resolve_z(cfg, 10) == 3
    assert resolve_z(tiny_config(tmp_path, z_fraction=0.25), 10) == 2
    with pytest.raises(ValueError):
        resolve_z(tiny_config(tmp_path, z=11), 10)


def test_split_target_ids_deterministic_partition(tmp_path):
    cfg = tiny_config(tmp_path)
    ids = [f"clip{i}" for i in range(50)]
    cand, test = split_target_ids(cfg, ids)
    cand2, test2 = split_target_ids(cfg, ids)
    assert cand == cand2 and test == test2
    assert sorted(cand + test) == sorted(ids)
    assert cand and test
    assert not set(cand) & set(test)


# --- stage artifacts ---------------------------------------------------------


def test_synth_writes_manifests_and_stamp(run):
    cfg, ws, _ = run
    src, tgt = run_synth(cfg)
    assert src.exists() and tgt.exists()
    assert ws.is_done("synth", synth_hash(cfg))
    src_records = read_manifest(src)
    assert len(src_records) == cfg.n_source
    assert len(read_manifest(tgt)) == cfg.n_target
    wavs = sorted((src.parent / "wav" / "source").glob("*.wav"))
    assert len(wavs) == cfg.n_source
    assert all(r.provenance == "ground_truth" for r in src_records)
    # idempotent: a second call must not rewrite the manifest
    before = src.stat().st_mtime_ns
    run_synth(cfg)
    assert src.stat().st_mtime_ns == before


def test_train_stage_artifacts(run):
    cfg, ws, _ = run
    ens_dir = ws.stage_dir("ensemble", ensemble_hash(cfg, ws))
    for w in range(cfg.n_experts):
        assert (ens_dir / f"expert_{w:03d}.bin").exists()
        log_csv = ens_dir / f"train_log_{w:03d}.csv"
        rows = list(csv.DictReader(log_csv.open()))
        assert len(rows) == cfg.epochs
        assert list(rows[0].keys()) == ["epoch", "bce", "dis_loss", "total", "val_accuracy"]
        assert all(float(r["bce"]) > 0 for r in rows)
    # the second expert actually saw a hinge term
    rows = list(csv.DictReader((ens_dir / "train_log_001.csv").open()))
    assert all(float(r["dis_loss"]) >= 0 for r in rows)


def test_mining_stage_artifacts(run):
    cfg, ws, _ = run
    mdir = ws.stage_dir("mining", mine_hash(cfg, ws))
    report, meta = read_mining_report(mdir / "report.json")
    candidates, _ = split_target_ids(cfg, [r.id for r in read_manifest(run_synth(cfg)[1])])
    assert report.total_candidates == len(candidates)
    assert report.z == resolve_z(cfg, len(candidates))
    assert set(report.selected) <= set(candidates)
    assert report.ranking == sorted(report.scores, key=lambda c: (-report.scores[c], c))
    csv_rows = list(csv.DictReader((mdir / "report.csv").open()))
    assert len(csv_rows) == len(report.scores)
    assert list(csv_rows[0].keys()) == ["id", "I", "rank", "selected"]


def test_pseudo_stage_artifacts(run):
    cfg, ws, _ = run
    augmented = ws.stage_dir("pseudo", pseudo_hash(cfg, ws)) / "augmented.jsonl"
    records = read_manifest(augmented)
    pseudo = [r for r in records if r.provenance == "pseudo"]
    source = [r for r in records if r.provenance == "ground_truth"]
    assert len(source) == cfg.n_source
    assert 1 <= len(pseudo)
    report, _ = read_mining_report(ws.stage_dir("mining", mine_hash(cfg, ws)) / "report.json")
    assert len(pseudo) <= report.z
    for rec in pseudo:
        assert rec.swap is not None and {"seg_a", "seg_b", "seed"} <= set(rec.swap)
        labels = rec.frame_labels().labels
        assert (labels == 0).any() and (labels == 1).any()
        assert (augmented.parent / rec.wav_path).exists()


def test_eval_stage_artifacts(run):
    cfg, ws, metrics = run
    edir = ws.stage_dir("eval", eval_hash(cfg, ws))
    on_disk = json.loads((edir / "metrics.json").read_text(encoding="utf-8"))
    assert on_disk == metrics
    for key in ("precision", "recall", "f1", "sentence_acc", "mean_entropy",
                "strategy", "z", "counts", "n_test_clips", "n_selected"):
        assert key in metrics
    assert 0.0 <= metrics["f1"] <= 1.0
    assert metrics["strategy"] == "sde"
    rows = list(csv.DictReader((edir / "metrics.csv").open()))
    assert len(rows) == 1
    assert float(rows[0]["f1"]) == pytest.approx(metrics["f1"])
    assert (edir / "train_log_detector.csv").exists()


def test_stamps_cover_every_stage(run):
    cfg, ws, _ = run
    stamped = {p.name.rsplit("-", 1)[0] for p in ws.stamps.glob("*.json")}
    assert {"synth", "train-experts", "mine", "pseudo-label", "retrain-eval"} <= stamped
    payload = json.loads(next(ws.stamps.glob("retrain-eval-*.json")).read_text())
    assert payload["stage"] == "retrain-eval" and "artifacts" in payload


# --- resume behaviour --------------------------------------------------------


def test_stamped_stage_skips_work(run, monkeypatch):
    cfg, _, _ = run
    monkeypatch.setattr(pipeline, "train_expert", _fail_if_called)
    assert run_train_experts(cfg).exists()


def _fail_if_called(*a, **kw):
    raise AssertionError("stage should have been skipped or resumed from checkpoints")


def test_checkpoints_survive_missing_stamp(run, monkeypatch):
    cfg, ws, _ = run
    h = ensemble_hash(cfg, ws)
    stamp = ws.stamps / f"train-experts-{h}.json"
    payload = stamp.read_text(encoding="utf-8")
    stamp.unlink()
    monkeypatch.setattr(pipeline, "train_expert", _fail_if_called)
    # per-expert checkpoints exist, so the stage rebuilds without retraining
    out = run_train_experts(cfg)
    assert out == ws.stage_dir("ensemble", h)
    assert ws.is_done("train-experts", h)
    assert stamp.read_text(encoding="utf-8") == payload


def test_provenance_guard_rejects_pseudo_in_test_split(run, monkeypatch):
    cfg, _, _ = run
    probe = dataclasses.replace(cfg, retrain_epochs=1)

    def leaky_split(c, ids):
        ids = list(ids)
        return ids, ids  # every candidate also lands in the test split

    monkeypatch.setattr(pipeline, "split_target_ids", leaky_split)
    with pytest.raises(RuntimeError, match="provenance violation"):
        run_retrain_eval(probe)


def test_rerun_reproduces_metrics_bytes(run):
    cfg, ws, _ = run
    h = eval_hash(cfg, ws)
    metrics_json = ws.stage_dir("eval", h) / "metrics.json"
    before = metrics_json.read_bytes()
    (ws.stamps / f"retrain-eval-{h}.json").unlink()
    run_retrain_eval(cfg)
    assert metrics_json.read_bytes() == before


def test_z_zero_trains_on_source_only(run):
    cfg, ws, _ = run
    probe = dataclasses.replace(cfg, z=0, retrain_epochs=1)
    metrics = run_retrain_eval(probe)
    assert metrics["n_selected"] == 0
    assert metrics["mean_entropy"] == 0.0
    augmented = ws.stage_dir("pseudo", pseudo_hash(probe, ws)) / "augmented.jsonl"
    assert all(r.provenance == "ground_truth" for r in read_manifest(augmented))


# --- feature cache -----------------------------------------------------------


def test_feature_cache_serves_when_wav_unreadable(tmp_path):
    cfg = tiny_config(tmp_path / "cache", n_source=3, n_target=3, cache_features=True)
    ws = Workspace(cfg.output_dir)
    src, _ = run_synth(cfg)
    first, _ = corpus_samples(cfg, src, ws)
    victim = next((src.parent / "wav" / "source").glob("*.wav"))
    victim.write_bytes(b"not a wav at all")
    again, _ = corpus_samples(cfg, src, ws)
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a.features.values, b.features.values)


def test_mixed_sample_rates_need_opt_in(tmp_path):
    cfg = tiny_config(tmp_path / "rates", n_source=2, n_target=2)
    src, _ = run_synth(cfg)
    records = read_manifest(src)
    doctored = src.parent / "mixed.jsonl"
    lines = []
    for i, rec in enumerate(records):
        obj = json.loads(src.read_text().splitlines()[i])
        if i == 0:
            obj["sample_rate"] = rec.sample_rate * 2
        lines.append(json.dumps(obj))
    doctored.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(ValueError, match="mixed sample rates"):
        corpus_samples(cfg, doctored, None)


# --- sweep --------------------------------------------------------------------


def test_sweep_emits_run_and_summary_tables(run):
    cfg, _, _ = run
    summary_csv = run_sweep(cfg, param="u", values=(0.5, 0.75), repeats=1)
    runs_csv = summary_csv.parent / "sweep_runs.csv"
    runs = list(csv.DictReader(runs_csv.open()))
    assert len(runs) == 2
    assert list(runs[0].keys()) == [
        "value", "repeat", "seed", "precision", "recall", "f1",
        "sentence_acc", "mean_entropy",
    ]
    # paired repeats: both arms of repeat 0 share one derived seed
    assert runs[0]["seed"] == runs[1]["seed"]
    summary = list(csv.DictReader(summary_csv.open()))
    assert [r["value"] for r in summary] == ["0.5", "0.75"]
    for row in summary:
        assert row["repeats"] == "1"
        assert float(row["avg_f1"]) == float(row["best_f1"])


def test_sweep_rejects_bad_grid(run):
    cfg, _, _ = run
    with pytest.raises(ValueError):
        run_sweep(cfg, param="lr", values=(0.1,), repeats=1)
    with pytest.raises(ValueError):
        run_sweep(cfg, param="u", values=(), repeats=1)


# --- CLI ----------------------------------------------------------------------


def test_cli_synth_and_config_overrides(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"n_source": 3, "n_target": 2, "seed": 7}))
    rc = cli_main(["synth", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                   "--n-source", "4"])
    assert rc == 0
    src_line, tgt_line = capsys.readouterr().out.strip().splitlines()
    assert len(read_manifest(Path(src_line))) == 4  # CLI flag beats config file
    assert len(read_manifest(Path(tgt_line))) == 2


def test_cli_output_dir_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(pipeline.OUTPUT_DIR_ENV, str(tmp_path / "env_out"))
    rc = cli_main(["synth", "--n-source", "2", "--n-target", "2", "--seed", "3"])
    assert rc == 0
    out_lines = capsys.readouterr().out.strip().splitlines()
    assert out_lines[0].startswith(str(tmp_path / "env_out"))


def test_cli_error_exit_codes(tmp_path, capsys):
    assert cli_main(["synth", "--config", str(tmp_path / "missing.json")]) == 2
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"strategy": "bogus"}))
    assert cli_main(["synth", "--config", str(bad_cfg)]) == 2
    # runtime failure inside a stage: z larger than the candidate pool
    rc = cli_main(["mine", "--out", str(tmp_path / "o"), "--seed", "3",
                   "--n-source", "2", "--n-target", "2", "--n-experts", "1",
                   "--epochs", "1", "--z", "9999"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_entry_point_installed():
    proc = subprocess.run([sys.executable, "-m", "fakeloc", "--help"],
                          capture_output=True, text=True)
    if proc.returncode != 0:  # no __main__ module; fall back to the script
        proc = subprocess.run(["fakeloc", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("synth", "train-experts", "mine", "pseudo-label", "retrain-eval", "sweep"):
        assert cmd in proc.stdout
