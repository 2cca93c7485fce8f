import json

import numpy as np
import pytest

from foresight import metrics
from foresight.cli import evaluate_records, main
from foresight.config import ConfigError, RunConfig
from foresight.predictor import Batch
from foresight.serialization import CheckpointError, load_checkpoint, read_jsonl, save_checkpoint

TINY = {"n_videos": 60, "len_min": 7, "len_max": 9, "feature_dim": 16, "hidden": 32, "dropout": 0.0,
        "standardize_time": True, "caption_layers": 2, "caption_hidden": 32, "caption_embed": 16,
        "caption_batch_size": 100, "batch_size": 32, "epochs": 5}


def _config(tmp, **extra):
    path = tmp / "run.json"
    path.write_text(json.dumps({**TINY, **extra}))
    return str(path)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Generate data and train both models once for the whole module."""
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _config(tmp)
    assert main(["gen-data", "--config", cfg, "--out", str(tmp / "data")]) == 0
    assert main(["train-predictor", "--config", cfg, "--dataset", str(tmp / "data/train.jsonl"),
                 "--epochs", "40", "--lr", "3e-3", "--out", str(tmp / "pred.ckpt")]) == 0
    assert main(["train-captioner", "--config", cfg, "--dataset", str(tmp / "data/train.jsonl"),
                 "--epochs", "60", "--lr", "3e-3", "--out", str(tmp / "cap.ckpt")]) == 0
    assert main(["predict", "--config", cfg, "--checkpoint", str(tmp / "pred.ckpt"),
                 "--input", str(tmp / "data/test.jsonl"), "--captioner", str(tmp / "cap.ckpt"),
                 "--out", str(tmp / "preds.jsonl"), "--references-out", str(tmp / "refs.jsonl")]) == 0
    return tmp, cfg


def test_gen_data_counts_and_byte_identical_rerun(run, tmp_path):
    tmp, cfg = run
    manifest = json.loads((tmp / "data/manifest.json").read_text())
    assert manifest["counts"]["all"] == TINY["n_videos"] == len(read_jsonl(tmp / "data/dataset.jsonl"))
    assert manifest["counts"]["train"] + manifest["counts"]["test"] == TINY["n_videos"]
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    for name in ("dataset.jsonl", "train.jsonl", "test.jsonl", "grammar.json", "manifest.json"):
        assert (tmp / "data" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_training_log_written_and_decreasing(run):
    tmp, _ = run
    log = read_jsonl(str(tmp / "pred.ckpt") + ".log.jsonl")
    assert [r["epoch"] for r in log] == list(range(1, 41))
    assert log[-1]["loss"] < log[0]["loss"]


def test_same_seed_identical_logs_and_lr_zero_flat(run, tmp_path):
    tmp, cfg = run
    logs = []
    for k, lr in enumerate(["1e-3", "1e-3", "0"]):
        out = tmp_path / f"p{k}.ckpt"
        assert main(["train-predictor", "--config", cfg, "--dataset", str(tmp / "data/train.jsonl"),
                     "--epochs", "3", "--lr", lr, "--out", str(out)]) == 0
        logs.append([r["loss"] for r in read_jsonl(str(out) + ".log.jsonl")])
    assert logs[0] == logs[1]
    assert max(logs[2]) - min(logs[2]) < 1e-12


def test_prediction_records(run):
    tmp, _ = run
    recs = read_jsonl(tmp / "preds.jsonl")
    assert recs
    for r in recs:
        assert len(r["dists"]) == 3
        assert all(abs(sum(d) - 1) < 1e-6 for d in r["dists"])
        assert r["start_time"] >= 0
        assert len(r["captions"]) == 3


def test_end_to_end_captions_name_the_scene_object(run):
    tmp, _ = run
    recs = read_jsonl(tmp / "preds.jsonl")
    hits = [r["scene_objects"][0] in r["captions"][0] for r in recs]
    assert np.mean(hits) >= 0.9


def test_self_evaluation_is_perfect(run, tmp_path):
    tmp, _ = run
    refs = str(tmp / "refs.jsonl")
    out = tmp_path / "report.json"
    assert main(["evaluate", "--predictions", refs, "--references", refs, "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["top1"] == 1.0 and report["bleu4"] == pytest.approx(1.0)
    for key in ("bleu4", "rouge_l", "cider", "pr", "rc", "top1", "top3", "top5"):
        assert key in report


def test_report_matches_metrics_module(run):
    tmp, _ = run
    preds, refs = read_jsonl(tmp / "preds.jsonl"), read_jsonl(tmp / "refs.jsonl")
    report = evaluate_records(preds, refs)
    rmap = {r["id"]: r for r in refs}
    dists, golds, cands, crefs = [], [], [], []
    for p in sorted(preds, key=lambda r: r["id"]):
        dists += p["dists"]
        golds += rmap[p["id"]]["labels"]
        cands += [c or ["<empty>"] for c in p["captions"]]
        crefs += [[c] for c in rmap[p["id"]]["captions"]]
    rep = metrics.classification_report(dists, golds, num_classes=len(dists[0]))
    assert report["top1"] == rep.topk[1] and report["pr"] == rep.pr and report["rc"] == rep.rc
    assert report["bleu4"] == metrics.bleu(cands, crefs)
    assert report["cider"] == metrics.cider(cands, crefs)
    assert report["rouge_l"] == metrics.corpus_rouge_l(cands, crefs)


def test_evaluate_id_errors(tmp_path):
    a = [{"id": "x:0", "labels": [0]}]
    b = [{"id": "y:0", "labels": [0]}]
    with pytest.raises(Exception, match="share no ids"):
        evaluate_records(a, b)
    with pytest.raises(Exception, match="y:0"):
        evaluate_records(a + b, a)
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    pa.write_text(json.dumps(a[0]) + "\n")
    pb.write_text(json.dumps(b[0]) + "\n")
    assert main(["evaluate", "--predictions", str(pa), "--references", str(pb)]) == 3


def test_checkpoint_round_trip_bit_identical(run, tmp_path):
    tmp, _ = run
    model = load_checkpoint(tmp / "pred.ckpt")
    save_checkpoint(tmp_path / "copy.ckpt", model)
    again = load_checkpoint(tmp_path / "copy.ckpt")
    rng = np.random.default_rng(0)
    scene_dim, seq_dim, last_dim = model.feature_dims
    batch = Batch(seq=rng.standard_normal((model.cfg.window, 100, seq_dim)),
                  scene=rng.standard_normal((100, scene_dim)), last=rng.standard_normal((100, last_dim)))
    for x, y in zip(model.predict(batch), again.predict(batch)):
        np.testing.assert_array_equal(x.label_dists, y.label_dists)
        assert x.start_time == y.start_time
    cap = load_checkpoint(tmp / "cap.ckpt")
    save_checkpoint(tmp_path / "cap2.ckpt", cap)
    cap2 = load_checkpoint(tmp_path / "cap2.ckpt")
    assert cap2.vocab.itos == cap.vocab.itos
    for name, p in cap.named_parameters().items():
        np.testing.assert_array_equal(p.data, cap2.named_parameters()[name].data)


def test_checkpoint_corruption_errors(run, tmp_path):
    tmp, cfg = run
    raw = (tmp / "pred.ckpt").read_bytes()
    bad_magic, bad_version, truncated = tmp_path / "m.ckpt", tmp_path / "v.ckpt", tmp_path / "t.ckpt"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    bad_version.write_bytes(raw[:4] + b"\x09\x00" + raw[6:])
    truncated.write_bytes(raw[:-8])
    for path in (bad_magic, bad_version, truncated):
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
    code = main(["predict", "--config", cfg, "--checkpoint", str(bad_version),
                 "--input", str(tmp / "data/test.jsonl"), "--out", str(tmp_path / "p.jsonl")])
    assert code == 4


def test_caption_command(run, tmp_path):
    tmp, cfg = run
    inp = tmp_path / "in.jsonl"
    inp.write_text(json.dumps({"id": "q", "input": ["take", "out", "bowl"]}) + "\n")
    assert main(["caption", "--config", cfg, "--checkpoint", str(tmp / "cap.ckpt"), "--input", str(inp),
                 "--out", str(tmp_path / "c.jsonl")]) == 0
    (rec,) = read_jsonl(tmp_path / "c.jsonl")
    assert rec["id"] == "q" and isinstance(rec["caption"], list)


def test_exit_codes(run, tmp_path):
    tmp, cfg = run
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"window": 0}))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    bad.write_text(json.dumps({"not_a_key": 1}))
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert main(["train-predictor", "--config", cfg, "--dataset", str(tmp_path / "missing.jsonl")]) == 3
    mismatch = _config(tmp_path, feature_dim=8)
    assert main(["train-predictor", "--config", mismatch, "--dataset", str(tmp / "data/train.jsonl"),
                 "--epochs", "1", "--out", str(tmp_path / "x.ckpt")]) == 3
    assert main(["predict", "--config", cfg, "--checkpoint", str(tmp_path / "none.ckpt"),
                 "--input", str(tmp / "data/test.jsonl")]) == 4


def test_ablation_flag_removes_branch(run, tmp_path):
    tmp, cfg = run
    out = tmp_path / "ab.ckpt"
    assert main(["train-predictor", "--config", cfg, "--dataset", str(tmp / "data/train.jsonl"), "--epochs", "1",
                 "--ablate", "scene", "--ablate", "time", "--out", str(out)]) == 0
    model = load_checkpoint(out)
    assert not model.cfg.use_scene and not model.cfg.use_time and model.time_head is None


@pytest.mark.parametrize("bad", [{"window": 0}, {"horizon": 0}, {"dropout": 1.0}, {"optimizer": "sgd"},
                                 {"epochs": "ten"}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_thread_count_does_not_change_captions(run, tmp_path, monkeypatch):
    tmp, cfg = run
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("FORESIGHT_THREADS", threads)
        out = tmp_path / f"p{threads}.jsonl"
        assert main(["predict", "--config", cfg, "--checkpoint", str(tmp / "pred.ckpt"),
                     "--input", str(tmp / "data/test.jsonl"), "--captioner", str(tmp / "cap.ckpt"),
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
