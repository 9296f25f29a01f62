"""Command-line entry point: ``decoclip <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from decoclip.findings import FINDING_NAMES, FindingLabel
from decoclip.labeler import (Lexicon, UnmappedClassError, class_to_label, sentence_to_label,
                              split_report, tag_sentence)
from decoclip.report import format_records, write_records, write_table

log = logging.getLogger("decoclip")


# ---------------------------------------------------------------- labels

def cmd_extract_labels(args) -> int:
    lexicon = Lexicon.load(args.lexicon, window=args.window)
    src = Path(args.input)
    n_out = n_unlabeled = 0
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w") as out:
        if src.suffix.lower() == ".csv":
            with open(src, newline="") as fh:
                for row in csv.DictReader(fh):
                    try:
                        label = class_to_label(row["class_name"], lexicon)
                    except UnmappedClassError as exc:
                        print(f"error: {exc}", file=sys.stderr)
                        return 2
                    out.write(json.dumps({"id": row["id"], "class_name": row["class_name"],
                                          "label": label.to_list(), "findings": label.names,
                                          "trace": []}) + "\n")
                    n_out += 1
        else:
            with open(src) as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    report = json.loads(line)
                    for k, sentence in enumerate(split_report(report.get("text", ""))):
                        mentions = tag_sentence(sentence, lexicon)
                        label = sentence_to_label(mentions, args.uncertain)
                        n_unlabeled += label.unlabeled
                        out.write(json.dumps({
                            "id": f"{report['id']}#{k}", "report_id": report["id"],
                            "sentence": sentence, "text": sentence, "label": label.to_list(),
                            "findings": label.names, "unlabeled": label.unlabeled,
                            "trace": [m.to_dict() for m in mentions],
                        }) + "\n")
                        n_out += 1
    print(format_records([("records", n_out), ("unlabeled", n_unlabeled), ("output", args.output)]), end="")
    return 0


def _read_label_rows(path) -> tuple[list[str], list[FindingLabel], int]:
    ids, labels, dropped = [], [], 0
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            label = FindingLabel.from_array(row["label"])
            if label.unlabeled:
                dropped += 1
                continue
            ids.append(str(row["id"]))
            labels.append(label)
    return ids, labels, dropped


def cmd_build_matrix(args) -> int:
    from decoclip.pairing import build_pool_matrix

    img_ids, img_labels, d1 = _read_label_rows(args.images)
    txt_ids, txt_labels, d2 = _read_label_rows(args.texts)
    build_pool_matrix(img_ids, img_labels, txt_ids, txt_labels, args.out)
    print(format_records([("rows", len(img_ids)), ("cols", len(txt_ids)),
                          ("dropped_unlabeled", d1 + d2), ("output", args.out)]), end="")
    return 0


# ---------------------------------------------------------------- training

def cmd_gen_synthetic(args) -> int:
    from decoclip.pipeline.ingest import write_image_pool, write_text_pool
    from decoclip.pipeline.synthetic import SyntheticCorpusSpec, generate_synthetic_corpus

    data = yaml.safe_load(Path(args.spec).read_text()) if args.spec else {}
    allowed = {f.name for f in dataclasses.fields(SyntheticCorpusSpec)}
    unknown = sorted(set(data or {}) - allowed)
    if unknown:
        print(f"error: unknown spec keys: {', '.join(unknown)}", file=sys.stderr)
        return 2
    spec = SyntheticCorpusSpec(**(data or {}))
    corpus = generate_synthetic_corpus(spec, seed=args.seed)
    out = Path(args.out)
    write_image_pool(out, corpus.images)
    write_text_pool(out / "texts.jsonl", corpus.texts)
    (out / "spec.yaml").write_text(yaml.safe_dump({**dataclasses.asdict(spec), "seed": args.seed,
                                                   "findings": list(spec.findings)}))
    print(format_records([("images", len(corpus.images)), ("texts", len(corpus.texts)), ("output", out)]), end="")
    return 0


def _load_image_pool(path, adapter=None):
    from decoclip.pipeline.ingest import ingest_dataset, read_image_pool

    path = Path(path)
    if adapter:
        return ingest_dataset(adapter, path)[0]
    if (path / "labels.csv").exists():
        return ingest_dataset("image-label", path)[0]
    if (path / "reports.jsonl").exists():
        return ingest_dataset("paired-report", path)[0]
    return read_image_pool(path)


def cmd_pretrain(args) -> int:
    from decoclip.encoders import save_checkpoint
    from decoclip.pipeline.config import TrainConfig, load_config
    from decoclip.pipeline.ingest import read_text_pool
    from decoclip.pipeline.train import steps_per_epoch, train
    from decoclip.plots import training_curve_figure

    config = load_config(args.config) if args.config else TrainConfig.desk_scale()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    images = _load_image_pool(args.images, args.images_adapter)
    texts = read_text_pool(args.texts)
    out = Path(args.out)
    result = train(config, images, texts, out_dir=out, resume_from=args.resume)
    save_checkpoint(result.model, out / "final", step=result.step,
                    epoch=result.step // steps_per_epoch(len(images), len(texts), config.batch_size),
                    extra={"resize_to": config.augmentation.resize_to, "seed": config.seed, "loss": config.loss})
    figure = training_curve_figure(result.metrics, out / "training_curve.png") if result.metrics else None
    last = result.metrics[-1] if result.metrics else {}
    print(format_records([("steps", result.step), ("final_loss", last.get("loss_total", "")),
                          ("final_tau", last.get("tau", "")), ("checkpoint", out / "final"),
                          ("metrics", out / "metrics.jsonl"), ("figure", figure or "")]), end="")
    return 0


# ---------------------------------------------------------------- evaluation

def _load_model(ckpt):
    from decoclip.encoders import load_checkpoint
    from decoclip.evaluation.zeroshot import eval_spec

    model, manifest = load_checkpoint(ckpt)
    return model, manifest, eval_spec(model, manifest.extra.get("resize_to"))


def _default_classes(records) -> list[str]:
    present = {n for r in records for n in r.label.names if len(r.label.names) == 1}
    return [n for n in FINDING_NAMES if n in present]


def _class_filter(records, classes):
    keep, idx = [], []
    for r in records:
        names = r.label.names
        if len(names) == 1 and names[0] in classes:
            keep.append(r)
            idx.append(classes.index(names[0]))
    return keep, np.asarray(idx, dtype=int)


def _emit(records, out_dir, name="report.txt"):
    print(format_records(records), end="")
    if out_dir:
        write_records(records, Path(out_dir) / name)


def cmd_zeroshot(args) -> int:
    from decoclip.evaluation.prompts import PromptSet
    from decoclip.evaluation.zeroshot import zero_shot_classify
    from decoclip.plots import confusion_figure

    model, manifest, spec = _load_model(args.ckpt)
    images = _load_image_pool(args.data)
    prompt_cfg = json.loads(Path(args.prompts).read_text()) if args.prompts else {}
    fixed = PromptSet({k: list(v) for k, v in prompt_cfg["prompts"].items()}) if "prompts" in prompt_cfg else None
    classes = args.classes.split(",") if args.classes else (
        prompt_cfg.get("classes") or (fixed.classes if fixed else _default_classes(images)))
    kept, labels = _class_filter(images, classes)
    report = zero_shot_classify(model, kept, labels, classes, prompts=fixed, ensemble=args.ensemble,
                                runs=args.runs, prompt_seed=args.prompt_seed,
                                n_prompts=int(prompt_cfg.get("n_prompts", 10)), spec=spec,
                                metadata={"checkpoint_id": manifest.checkpoint_id,
                                          "skipped_images": len(images) - len(kept)})
    records = report.records()
    if args.out:
        fig = confusion_figure(report.confusion, classes, Path(args.out) / "confusion.png",
                               "zero-shot" + (" (ensemble)" if args.ensemble else ""))
        records.append(("figure", fig))
    _emit(records, args.out)
    return 0


def cmd_retrieve(args) -> int:
    from decoclip.evaluation.retrieval import precision_at_k, similarity_histogram
    from decoclip.evaluation.zeroshot import embed_image_records, embed_texts
    from decoclip.pipeline.ingest import read_text_pool
    from decoclip.plots import similarity_histogram_figure

    model, manifest, spec = _load_model(args.ckpt)
    queries = _load_image_pool(args.queries)
    candidates = read_text_pool(args.candidates)
    classes = args.classes.split(",") if args.classes else _default_classes(queries)
    queries, q_cls = _class_filter(queries, classes)
    candidates, c_cls = _class_filter(candidates, classes)
    ks = [int(k) for k in args.k.split(",")]
    try:
        result = precision_at_k(embed_image_records(model, queries, spec).numpy(), q_cls,
                                embed_texts(model, [c.text for c in candidates]).numpy(), c_cls,
                                cand_ids=[c.id for c in candidates], ks=ks,
                                query_ids=[q.id for q in queries])
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result.meta.update(checkpoint_id=manifest.checkpoint_id, candidates=len(candidates))
    records = result.records()
    if args.out:
        out = Path(args.out)
        for ci, cname in enumerate(classes):
            counts, edges = similarity_histogram(ci, result, bins=args.bins)
            slug = cname.lower().replace(" ", "_")
            write_table(("bin_lo", "bin_hi", "count"),
                        [(f"{lo:.4f}", f"{hi:.4f}", int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)],
                        out / f"histogram_{slug}.tsv")
            fig = similarity_histogram_figure(counts, edges, cname, out / f"histogram_{slug}.png")
            records.append((f"figure.{cname}", fig))
        with open(out / "rankings.tsv", "w") as fh:
            fh.write("query_id\trank\tcandidate_id\tscore\tsame_class\n")
            for qi, qid in enumerate(result.query_ids):
                for r, (cid, sc, hit) in enumerate(zip(result.ranked_ids[qi], result.ranked_scores[qi],
                                                       result.ranked_hits[qi]), 1):
                    fh.write(f"{qid}\t{r}\t{cid}\t{sc:.6f}\t{int(hit)}\n")
    _emit(records, args.out)
    return 0


def cmd_finetune(args) -> int:
    from decoclip.evaluation.probe import linear_probe
    from decoclip.plots import confusion_figure

    model, manifest, _ = _load_model(args.ckpt)
    train_pool = _load_image_pool(args.train)
    test_pool = _load_image_pool(args.test)
    classes = args.classes.split(",") if args.classes else _default_classes(train_pool)
    train_pool, y_train = _class_filter(train_pool, classes)
    test_pool, y_test = _class_filter(test_pool, classes)
    report, _ = linear_probe(model, train_pool, y_train, test_pool, y_test, classes,
                             epochs=args.epochs, seed=args.seed)
    report.metadata["checkpoint_id"] = manifest.checkpoint_id
    records = report.records()
    if args.out:
        records.append(("figure", confusion_figure(report.confusion, classes,
                                                   Path(args.out) / "confusion.png", "linear probe")))
    _emit(records, args.out)
    return 0


def cmd_export(args) -> int:
    from decoclip.evaluation.export import export_embeddings
    from decoclip.pipeline.ingest import read_text_pool

    model, manifest, _ = _load_model(args.ckpt)
    data = Path(args.data)
    if data.is_file():
        records, modality = read_text_pool(data), "text"
    else:
        records, modality = _load_image_pool(data), "image"
    path = export_embeddings(model, records, args.out, manifest.checkpoint_id, modality)
    print(format_records([("rows", len(records)), ("dim", model.cfg.proj_dim), ("output", path)]), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decoclip", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-labels", help="label report sentences or class names")
    p.add_argument("--input", required=True, help="reports JSONL (id, text) or CSV (id, class_name)")
    p.add_argument("--lexicon", default=None, help="lexicon JSON (default: bundled)")
    p.add_argument("--output", required=True)
    p.add_argument("--uncertain", choices=("affirm", "ignore"), default="affirm")
    p.add_argument("--window", type=int, default=None)
    p.set_defaults(func=cmd_extract_labels)

    p = sub.add_parser("build-matrix", help="pool-level label similarity matrix")
    p.add_argument("--images", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_matrix)

    p = sub.add_parser("gen-synthetic", help="write a planted-semantics corpus")
    p.add_argument("--spec", default=None, help="YAML with corpus spec fields")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("pretrain", help="contrastive pretraining")
    p.add_argument("--config", default=None, help="YAML config (default: desk-scale preset)")
    p.add_argument("--images", required=True, help="image pool directory")
    p.add_argument("--images-adapter", default=None,
                   choices=("paired-report", "image-label", "synthetic"))
    p.add_argument("--texts", required=True, help="text pool JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("zeroshot", help="zero-shot prompt classification")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prompts", default=None,
                   help='JSON: {"classes": [...], "n_prompts": 10} or {"prompts": {class: [...]}}')
    p.add_argument("--classes", default=None, help="comma-separated class names")
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--prompt-seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for report.txt and figures")
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("retrieve", help="image-to-text retrieval, Precision@K")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--k", default="1,2,5,10")
    p.add_argument("--classes", default=None)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("finetune", help="linear probe on the frozen image encoder")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--classes", default=None)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("export-embeddings", help="dump embeddings as float32 + sidecar")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="image pool directory or text pool JSONL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from decoclip.evaluation.prompts import PromptConfigError
    from decoclip.pairing import InsufficientDataError
    from decoclip.pipeline.config import ConfigError
    from decoclip.pipeline.ingest import IngestionError

    try:
        return args.func(args)
    except (ConfigError, PromptConfigError, IngestionError, InsufficientDataError,
            UnmappedClassError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
