"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .captioner import Seq2SeqModel, build_captioner, build_input_text, train_captioner
from .config import ConfigError, RunConfig
from .datagen import (ActivityGrammar, GrammarError, generate_dataset, make_cycle_grammar,
                      make_disambiguation_grammar, make_stochastic_grammar, split_dataset)
from .ndcore import ShapeError
from .optim import make_optimizer
from .pipeline import build_vocab, caption_pairs, caption_tokens, encode_pairs, window_context
from .predictor import (PredictorConfig, PredictorModel, build_predictor, predict_sequence, top_k,
                        train_predictor, unknown_gate, windows_from_videos)
from .serialization import (CheckpointError, ensure_parent, load_checkpoint, load_videos, read_jsonl,
                            save_checkpoint, save_videos, write_jsonl)

log = logging.getLogger("foresight")

EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 2, 3, 4


class DataError(Exception):
    pass


def worker_threads() -> int:
    try:
        return max(1, int(os.environ.get("FORESIGHT_THREADS", "1")))
    except ValueError:
        return 1


def make_grammar(cfg: RunConfig) -> ActivityGrammar:
    kind = cfg.grammar
    if kind == "disambiguation":
        return make_disambiguation_grammar(cfg.grammar_seed, cfg.num_classes, cfg.num_objects)
    if kind == "stochastic":
        return make_stochastic_grammar(cfg.grammar_seed, cfg.num_classes, cfg.num_objects)
    if kind == "cycle":
        return make_cycle_grammar(cfg.num_classes, cfg.num_objects, cfg.grammar_seed)
    path = Path(kind)
    if not path.exists():
        raise ConfigError(f"grammar must be disambiguation, stochastic, cycle or a JSON file; got {kind!r}")
    with open(path, encoding="utf-8") as fh:
        return ActivityGrammar.from_dict(json.load(fh))


def predictor_config(cfg: RunConfig, num_classes: int) -> PredictorConfig:
    return PredictorConfig(
        num_classes=num_classes, window=cfg.window, horizon=cfg.horizon, hidden=cfg.hidden,
        lstm_layers=cfg.lstm_layers, fc_layers=cfg.fc_layers, dropout=cfg.dropout,
        use_scene=cfg.use_scene, use_time=cfg.use_time, unknown_threshold=cfg.unknown_threshold,
        time_weight=cfg.time_weight, standardize_time=cfg.standardize_time)


def _load_dataset(path):
    if not path:
        raise ConfigError("no dataset path given (set 'dataset' in the config or pass --dataset)")
    try:
        videos = load_videos(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot read dataset {path}: {e}") from e
    if not videos:
        raise DataError(f"dataset {path} holds no videos")
    return videos


def _class_names(videos) -> tuple[int, list[str]]:
    names = {}
    for v in videos:
        for a in v.activities:
            names.setdefault(a.label, a.label_name)
    c = max(names) + 1
    return c, [names.get(k, str(k)) for k in range(c)]


def _epoch_logger(path):
    fh = open(path, "w", encoding="utf-8")

    def cb(epoch, loss):
        fh.write(json.dumps({"epoch": epoch + 1, "loss": loss}) + "\n")
        fh.flush()
        log.info("epoch %d loss %.6f", epoch + 1, loss)

    return fh, cb


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, out: str) -> dict:
    grammar = make_grammar(cfg)
    videos = generate_dataset(grammar, cfg.n_videos, (cfg.len_min, cfg.len_max), cfg.feature_dim,
                              cfg.noise_sigma, cfg.seed)
    train, test = split_dataset(videos, cfg.train_frac, cfg.seed)
    root = Path(out)
    try:
        root.mkdir(parents=True, exist_ok=True)
        counts = {"all": save_videos(root / "dataset.jsonl", videos),
                  "train": save_videos(root / "train.jsonl", train),
                  "test": save_videos(root / "test.jsonl", test)}
        with open(root / "grammar.json", "w", encoding="utf-8") as fh:
            json.dump(grammar.to_dict(), fh, sort_keys=True)
        manifest = {"seed": cfg.seed, "n_videos": cfg.n_videos, "counts": counts,
                    "grammar": cfg.grammar, "classes": grammar.classes, "objects": grammar.objects,
                    "feature_dim": cfg.feature_dim, "noise_sigma": cfg.noise_sigma}
        with open(root / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
    except OSError as e:
        raise DataError(f"cannot write dataset to {out}: {e}") from e
    return manifest


def cmd_train_predictor(cfg: RunConfig, out: str) -> list[float]:
    videos = _load_dataset(cfg.dataset)
    c, names = _class_names(videos)
    c = max(c, cfg.num_classes)
    names += [str(k) for k in range(len(names), c)]
    pcfg = predictor_config(cfg, c)
    windows = windows_from_videos(videos, pcfg)
    if not windows:
        raise DataError(f"no training windows: videos shorter than window + horizon = {cfg.window + cfg.horizon}")
    w0 = windows[0]
    dims = (w0.scene_feature.size, w0.seq_features.shape[1], w0.last_feature.size)
    if dims[1] != cfg.feature_dim:
        raise DataError(f"dataset activity features have dim {dims[1]} but config feature_dim is {cfg.feature_dim}")
    if any(w.seq_features.shape[1] != dims[1] or w.scene_feature.size != dims[0] for w in windows):
        raise DataError("feature dimensions are not uniform across the dataset")
    model = build_predictor(pcfg, dims, cfg.seed)
    model.class_names = names
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.lr, cfg.clip_norm or None)
    out = ensure_parent(out or cfg.checkpoint or "predictor.ckpt")
    fh, cb = _epoch_logger(str(out) + ".log.jsonl")
    with fh:
        res = train_predictor(model, windows, cfg.epochs, cfg.batch_size, opt, cfg.seed, callback=cb)
    save_checkpoint(out, model)
    return res.losses


def cmd_train_captioner(cfg: RunConfig, out: str, pairs_path: str | None = None) -> list[float]:
    if pairs_path:
        recs = read_jsonl(pairs_path)
        try:
            pairs = [(list(r["input"]), list(r["caption"])) for r in recs]
        except KeyError as e:
            raise DataError(f"pair file records need 'input' and 'caption': missing {e}") from e
    else:
        pairs = caption_pairs(_load_dataset(cfg.dataset))
    if not pairs:
        raise DataError("empty caption corpus")
    vocab = build_vocab(pairs, cfg.vocab_size)
    model = build_captioner(vocab, cfg.caption_layers, cfg.caption_hidden, cfg.caption_embed or None,
                            cfg.max_decode_len, cfg.seed)
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.lr, cfg.clip_norm or None)
    out = ensure_parent(out or cfg.checkpoint or "captioner.ckpt")
    fh, cb = _epoch_logger(str(out) + ".log.jsonl")
    with fh:
        res = train_captioner(model, encode_pairs(pairs, vocab), cfg.epochs, cfg.caption_batch_size, opt,
                              cfg.seed, callback=cb)
    save_checkpoint(out, model)
    return res.losses


def _decode_all(captioner, inputs, beam_width):
    with ThreadPoolExecutor(max_workers=worker_threads()) as ex:
        return list(ex.map(lambda toks: caption_tokens(captioner, toks, beam_width), inputs))


def cmd_predict(cfg: RunConfig, checkpoint: str, input_path: str, out: str,
                captioner_path: str | None = None, references_out: str | None = None) -> int:
    model = load_checkpoint(checkpoint)
    if not isinstance(model, PredictorModel):
        raise CheckpointError(f"{checkpoint} is not a predictor checkpoint")
    captioner = load_checkpoint(captioner_path) if captioner_path else None
    if captioner is not None and not isinstance(captioner, Seq2SeqModel):
        raise CheckpointError(f"{captioner_path} is not a captioner checkpoint")
    videos = _load_dataset(input_path)
    windows = windows_from_videos(videos, model.cfg)
    context = window_context(videos, model.cfg)
    try:
        outs = predict_sequence(model, windows) if windows else []
    except ShapeError as e:
        raise DataError(f"input features do not match the checkpoint: {e}") from e
    names = model.class_names or [str(k) for k in range(model.cfg.num_classes)]
    k = min(5, model.cfg.num_classes)
    records = []
    for w, o in zip(windows, outs):
        ctx = context[w.key]
        labels = [int(np.argmax(d)) for d in o.label_dists]
        rec = {"id": w.key, "video_id": w.video_id, "window": w.index,
               "dists": o.label_dists.tolist(),
               "top_k": [top_k(d, k) for d in o.label_dists],
               "labels": [unknown_gate(d, model.cfg.unknown_threshold) for d in o.label_dists],
               "label_names": [names[j] for j in labels],
               "start_time": o.start_time, "scene_objects": ctx["scene_objects"]}
        records.append(rec)
    if captioner is not None:
        inputs = [build_input_text(name, r["scene_objects"]) for r in records for name in r["label_names"]]
        caps = iter(_decode_all(captioner, inputs, cfg.beam_width))
        for r in records:
            r["captions"] = [next(caps) for _ in r["label_names"]]
    write_jsonl(ensure_parent(out), records)
    if references_out:
        refs = [{"id": w.key, "labels": w.target_labels.tolist(), "start_time": w.inter_time,
                 "captions": context[w.key]["captions"], "label_names": context[w.key]["label_names"]}
                for w in windows]
        write_jsonl(ensure_parent(references_out), refs)
    return len(records)


def cmd_caption(cfg: RunConfig, checkpoint: str, input_path: str, out: str) -> int:
    model = load_checkpoint(checkpoint)
    if not isinstance(model, Seq2SeqModel):
        raise CheckpointError(f"{checkpoint} is not a captioner checkpoint")
    recs = read_jsonl(input_path)
    inputs, owners = [], []
    for r in recs:
        if "input" in r:
            inputs.append(list(r["input"]))
            owners.append((r["id"], None))
        elif "label_names" in r:
            for h, name in enumerate(r["label_names"]):
                inputs.append(build_input_text(name, r.get("scene_objects", [])))
                owners.append((r["id"], h))
        else:
            raise DataError(f"record {r.get('id')!r} has neither 'input' nor 'label_names'")
    caps = _decode_all(model, inputs, cfg.beam_width)
    out_recs = [{"id": rid, "head": h, "caption": cap} if h is not None else {"id": rid, "caption": cap}
                for (rid, h), cap in zip(owners, caps)]
    write_jsonl(ensure_parent(out), out_recs)
    return len(out_recs)


def _dists(rec, num_classes):
    if "dists" in rec:
        return [np.asarray(d, dtype=float) for d in rec["dists"]]
    out = []
    for lab in rec["labels"]:
        d = np.zeros(num_classes)
        d[lab] = 1.0
        out.append(d)
    return out


def evaluate_records(preds: list[dict], refs: list[dict]) -> dict:
    pmap = {r["id"]: r for r in preds}
    rmap = {r["id"]: r for r in refs}
    if not set(pmap) & set(rmap):
        raise DataError("predictions and references share no ids")
    missing = sorted(set(rmap) - set(pmap)) + sorted(set(pmap) - set(rmap))
    if missing:
        raise DataError(f"ids present on only one side: {', '.join(missing[:20])}"
                        + (" ..." if len(missing) > 20 else ""))
    ids = sorted(rmap)
    c = 1 + max(max(rmap[i]["labels"]) for i in ids)
    c = max(c, max((len(pmap[i]["dists"][0]) for i in ids if "dists" in pmap[i]), default=0))
    dists, golds, heads = [], [], []
    for i in ids:
        for h, (d, g) in enumerate(zip(_dists(pmap[i], c), rmap[i]["labels"])):
            dists.append(d)
            golds.append(g)
            heads.append(h)
    rep = metrics.classification_report(dists, golds, ks=(1, 3, 5), num_classes=c)
    heads = np.array(heads)
    hit = np.array([int(np.argmax(d)) == g for d, g in zip(dists, golds)])
    report = {"pr": rep.pr, "rc": rep.rc, "top1": rep.topk[1], "top3": rep.topk[3], "top5": rep.topk[5],
              "top1_macro": rep.topk_macro[1], "top3_macro": rep.topk_macro[3], "top5_macro": rep.topk_macro[5],
              "top1_per_head": [float(hit[heads == h].mean()) for h in range(heads.max() + 1)],
              "examples": len(ids), "bleu4": None, "bleu4_sentence": None, "rouge_l": None, "cider": None}
    if all("captions" in pmap[i] and "captions" in rmap[i] for i in ids):
        cands, cref = [], []
        for i in ids:
            for cap, ref in zip(pmap[i]["captions"], rmap[i]["captions"]):
                cands.append(cap if cap else ["<empty>"])
                cref.append([ref])
        report.update(metrics.caption_scores(cands, cref).as_dict())
    return report


def cmd_evaluate(predictions: str, references: str, out: str | None) -> dict:
    try:
        report = evaluate_records(read_jsonl(predictions), read_jsonl(references))
    except (OSError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"cannot evaluate: {e}") from e
    if out:
        with open(ensure_parent(out), "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
    return report


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with RunConfig keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch", type=int)
    common.add_argument("--out")
    common.add_argument("--ablate", choices=["scene", "time"], action="append")
    common.add_argument("--dataset")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="foresight", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train-predictor", parents=[common], help="train the label/time predictor")
    tc = sub.add_parser("train-captioner", parents=[common], help="train the caption model")
    tc.add_argument("--pairs", help="JSONL file of {id, input, caption} records")
    pr = sub.add_parser("predict", parents=[common], help="predict future labels (and captions)")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--captioner")
    pr.add_argument("--references-out")
    ca = sub.add_parser("caption", parents=[common], help="decode captions for encoder inputs")
    ca.add_argument("--checkpoint", required=True)
    ca.add_argument("--input", required=True)
    ev = sub.add_parser("evaluate", parents=[common], help="score predictions against references")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--references", required=True)
    return p


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.lr is not None:
        over["lr"] = args.lr
    if args.batch is not None:
        over["caption_batch_size" if args.command == "train-captioner" else "batch_size"] = args.batch
    if args.dataset:
        over["dataset"] = args.dataset
    for what in args.ablate or []:
        over["use_scene" if what == "scene" else "use_time"] = False
    return replace(cfg, **over).validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _run_config(args)
        if args.command == "gen-data":
            manifest = cmd_gen_data(cfg, args.out or "data")
            print(json.dumps(manifest["counts"]))
        elif args.command == "train-predictor":
            losses = cmd_train_predictor(cfg, args.out)
            print(json.dumps({"final_loss": losses[-1] if losses else None}))
        elif args.command == "train-captioner":
            losses = cmd_train_captioner(cfg, args.out, args.pairs)
            print(json.dumps({"final_loss": losses[-1] if losses else None}))
        elif args.command == "predict":
            n = cmd_predict(cfg, args.checkpoint, args.input, args.out or "predictions.jsonl",
                            args.captioner, args.references_out)
            print(json.dumps({"windows": n}))
        elif args.command == "caption":
            n = cmd_caption(cfg, args.checkpoint, args.input, args.out or "captions.jsonl")
            print(json.dumps({"captions": n}))
        elif args.command == "evaluate":
            report = cmd_evaluate(args.predictions, args.references, args.out or cfg.report or None)
            print(json.dumps(report, sort_keys=True))
    except (ConfigError, GrammarError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, ShapeError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
