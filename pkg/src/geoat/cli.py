"""``geoat`` command line entry point."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import feature_config, resolve, write_resolved
from .data import Split, SplitSpec, iterative_stratified_split, read_manifest
from .embfile import EmbeddingFile, read_embedding_file, write_embedding_file
from .errors import ConfigError, GeoAtError
from .geo import GeoPoint, GscQueryConfig, PoiEntity, fetch_pois
from .gsc import Descriptor, HashedEncoder, ImportedEncoder, encode_descriptors, encode_gsc
from .metrics import EvalReport, evaluate, per_class_delta
from .models import ModelConfig
from .stats import (
    AnnotationMatrix,
    krippendorff_alpha_nominal,
    majority_vote,
    percent_agreement,
    welch_t_test,
    wilcoxon_signed_rank,
)
from .train import (
    FeatureStore,
    TrainConfig,
    evaluate_model,
    load_trained,
    save_trained,
    summarize,
    train,
)

log = logging.getLogger("geoat")


def _emit(obj):
    print(json.dumps(obj, indent=1, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, set):
        return sorted(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _record_file_run(out, args, extra=None):
    """Write ``<out>.resolved_config.yaml`` and VERSION beside a single-file output."""
    out = Path(out)
    doc = {"command": args.command, **{k: v for k, v in vars(args).items()
                                        if k not in ("func", "command") and not callable(v)}}
    write_resolved({**doc, **(extra or {})}, out.parent, f"{out.name}.resolved_config.yaml")


def _class_names(manifest: Path, n: int, configured=None) -> list:
    if configured:
        if len(configured) != n:
            raise ConfigError(f"{len(configured)} class names configured for {n} labels")
        return list(configured)
    for name in ("world.json", "classes.json"):
        p = manifest.parent / name
        if p.exists():
            doc = json.loads(p.read_text())
            names = doc.get("class_names") if isinstance(doc, dict) else doc
            if names and len(names) == n:
                return list(names)
    return [f"class_{k}" for k in range(n)]


def _geo_config(cfg: dict) -> GscQueryConfig:
    g = {k: v for k, v in cfg["geo"].items() if v is not None}
    return GscQueryConfig(**g)


def _poi_source(cfg: dict):
    qcfg = _geo_config(cfg)
    return lambda point: fetch_pois(point, qcfg)


# -- gsc -------------------------------------------------------------------------
def cmd_gsc_fetch(args):
    cfg = resolve(args.config, {"geo": {"side_m": args.side_m, "cache_dir": args.cache_dir}}, args.set)
    qcfg = _geo_config(cfg)
    if args.manifest:
        points = [(r.id, r.geo) for r in read_manifest(args.manifest) if r.geo is not None]
    elif args.lat is not None and args.lon is not None:
        points = [(f"{args.lat},{args.lon}", GeoPoint(args.lat, args.lon))]
    else:
        raise ConfigError("give --manifest or both --lat and --lon")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(out, "w", encoding="utf-8") as fh:
        for pid, point in points:
            ents = fetch_pois(point, qcfg, refresh=args.refresh)
            n += len(ents)
            fh.write(json.dumps({"id": pid, "lat": point.lat, "lon": point.lon,
                                 "entities": [e.to_dict() for e in ents]}, sort_keys=True) + "\n")
    _record_file_run(out, args, {"geo": cfg["geo"]})
    _emit({"points": len(points), "entities": n, "out": str(out)})


def cmd_gsc_encode(args):
    cfg = resolve(args.config, {"features": {"gsc_dim": args.dim}}, args.set)
    encoder = ImportedEncoder(read_embedding_file(args.embeddings)) if args.embeddings else HashedEncoder(
        cfg["features"]["gsc_dim"])
    keys, vecs, empty = [], [], 0
    if args.entities:
        for line in Path(args.entities).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            g = encode_gsc([PoiEntity.from_dict(e) for e in doc["entities"]], encoder, dedupe=args.dedupe)
            keys.append(doc["id"])
            vecs.append(g.values)
            empty += g.empty_context
    elif args.manifest:
        for r in read_manifest(args.manifest):
            if r.gsc_tags is None:
                continue
            descs = [Descriptor.parse(t) for t in r.gsc_tags]
            if args.dedupe:
                descs = list(dict.fromkeys(descs))
            g = encode_descriptors(descs, encoder)
            keys.append(r.id)
            vecs.append(g.values)
            empty += g.empty_context
    else:
        raise ConfigError("give --entities or --manifest")
    table = EmbeddingFile(keys, np.array(vecs).reshape(len(keys), encoder.dim))
    write_embedding_file(args.out, table)
    _record_file_run(args.out, args, {"features": cfg["features"]})
    _emit({"vectors": len(keys), "dim": encoder.dim, "empty_context": int(empty), "out": args.out})


# -- dataset / synth ---------------------------------------------------------------
def cmd_dataset_split(args):
    records = read_manifest(args.manifest)
    fractions = [float(x) for x in args.fractions.split(",")] if args.fractions else (0.70, 0.15, 0.15)
    split = iterative_stratified_split(records, SplitSpec(tuple(fractions), args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    split.save(out)
    _record_file_run(out, args)
    _emit({"train": len(split.train), "val": len(split.val), "test": len(split.test),
           "seed": args.seed, "notes": split.notes, "out": str(out)})


def cmd_synth_generate(args):
    from .synth import WorldSpec, confound_check, generate_world

    spec = WorldSpec(seed=args.seed, clips_per_class=args.clips_per_class, polyphony=args.polyphony)
    manifest = generate_world(spec, args.out)
    write_resolved({"command": "synth generate", "world": spec.to_json()}, args.out)
    result = {"manifest": str(manifest), "clips": spec.clips_per_class * len(spec.classes),
              "classes": spec.class_names, "confounded": list(spec.confounded)}
    if args.check:
        chk = confound_check(args.out)
        result["confound_p"] = chk.p_value
        result["descriptor_overlap"] = sorted(chk.descriptor_overlap)
    _emit(result)


# -- train / eval ------------------------------------------------------------------
def _train_flags(args) -> dict:
    flags = {
        "manifest": str(Path(args.manifest).resolve()) if args.manifest else None,
        "split": str(Path(args.split).resolve()) if args.split else None,
        "model": {"variant": args.variant, "backbone": args.backbone},
        "train": {"seed": args.seed, "max_epochs": args.max_epochs, "lr": args.lr},
    }
    if args.seeds:
        flags["seeds"] = [int(s) for s in args.seeds.split(",")]
    return flags


def cmd_train(args):
    cfg = resolve(args.config, _train_flags(args), args.set)
    if not cfg["manifest"]:
        raise ConfigError("no manifest configured")
    manifest = Path(cfg["manifest"])
    records = read_manifest(manifest)
    n_labels = len(records[0].labels)
    cfg["model"]["n_classes"] = n_labels
    fcfg = feature_config(cfg)
    poi = _poi_source(cfg) if any(r.geo is not None and r.gsc_tags is None and not r.gsc_embedding_ref
                                  for r in records) else None
    store = FeatureStore(records, manifest.parent, fcfg, poi_source=poi)
    cfg["model"]["d_gsc"] = store.gsc_dim
    class_names = _class_names(manifest, n_labels, cfg.get("class_names"))
    cfg["class_names"] = class_names
    out = Path(args.out)
    write_resolved(cfg, out)
    model_cfg = ModelConfig.from_dict(cfg["model"])

    seeds = cfg["seeds"] or [cfg["train"]["seed"]]
    summary_reports, runs = [], []
    for seed in seeds:
        if cfg["split"] and len(seeds) == 1:
            split = Split.load(cfg["split"])
        else:
            split = iterative_stratified_split(records, SplitSpec(tuple(cfg["split_spec"]["fractions"]), seed))
        tcfg = TrainConfig.from_dict({**cfg["train"], "seed": seed})
        run_dir = out if len(seeds) == 1 else out / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        res = train(store, split, tcfg, model_cfg)
        digest = save_trained(res, run_dir / "model.ckpt", fcfg, tcfg, class_names)
        res.write_history(run_dir / "history.csv")
        if len(seeds) > 1:
            split.save(run_dir / "split.json")
            rep = evaluate_model(res.model, store, split.test, res.norm, class_names, tcfg.threshold, seed)
            rep.save(run_dir)
            summary_reports.append(rep)
        runs.append({"seed": seed, "checkpoint": str(run_dir / "model.ckpt"), "sha256": digest,
                     "best_epoch": res.best_epoch, "best_val_f1": res.best_val_f1,
                     "epochs_run": len(res.history)})
    result = {"runs": runs}
    if summary_reports:
        result["summary"] = summarize(summary_reports)
        (out / "summary.json").write_text(json.dumps(result, indent=1) + "\n")
    _emit(result)


def cmd_eval(args):
    model, ckcfg = load_trained(args.checkpoint)
    cfg = resolve(args.config, {}, args.set)
    manifest = Path(args.manifest)
    records = read_manifest(manifest)
    fcfg = feature_config({"features": ckcfg["features"]})
    store = FeatureStore(records, manifest.parent, fcfg,
                         poi_source=_poi_source(cfg) if any(r.geo is not None for r in records) else None)
    if args.split:
        ids = getattr(Split.load(args.split), args.subset)
    else:
        ids = [r.id for r in records]
    class_names = ckcfg.get("class_names") or _class_names(manifest, len(records[0].labels))
    rep = evaluate_model(model, store, ids, tuple(ckcfg["mel_norm"]), class_names,
                         ckcfg["train"].get("threshold", 0.5), ckcfg["train"].get("seed"))
    if args.baseline:
        base = EvalReport.load(args.baseline)
        d = per_class_delta(rep, base)
        rep.delta_ap, rep.delta_baseline = d.delta, str(args.baseline)
    out = Path(args.out)
    write_resolved({**cfg, "checkpoint": str(Path(args.checkpoint).resolve()), "manifest": str(manifest.resolve()),
                    "split": args.split, "subset": args.subset}, out)
    rep.save(out)
    _emit({"map": rep.map, "micro_auc": rep.micro_auc, "macro_auc": rep.macro_auc,
           "f1_micro": rep.f1_micro, "n_excluded": rep.n_excluded, "out": str(out / "report.json")})


def cmd_delta(args):
    a, b = EvalReport.load(args.report), EvalReport.load(args.baseline)
    d = per_class_delta(a, b, args.threshold)
    doc = d.to_json()
    doc["report"], doc["baseline"] = args.report, args.baseline
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
        _record_file_run(args.out, args)
    _emit({k: (len(v) if isinstance(v, list) else v) for k, v in d.groups.items()})


# -- zero-shot ---------------------------------------------------------------------
def _read_score_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    ids = [r[0] for r in rows[1:]]
    scores = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return header[1:], ids, scores


def cmd_zeroshot_map(args):
    from .zeroshot import EmbeddingTable, LabelMapping, build_mapping, map_scores

    source_labels, ids, scores = _read_score_csv(args.scores)
    targets = [t.strip() for t in Path(args.targets).read_text(encoding="utf-8").splitlines() if t.strip()]
    if args.mapping:
        mapping = LabelMapping.load(args.mapping)
        mapping.target_labels = targets
    else:
        table = EmbeddingTable.load(args.embeddings) if args.embeddings else None
        if table is None:
            raise ConfigError("give --embeddings or --mapping")
        mapping = build_mapping(source_labels, targets, table, args.threshold)
    if list(mapping.source_labels) != list(source_labels):
        missing = [s for s in source_labels if s not in mapping.assignment]
        if missing:
            raise ConfigError(f"mapping lacks source labels {missing[:5]}")
        mapping.source_labels = list(source_labels)
    mapped = map_scores(scores, mapping)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved({"command": "zeroshot map", **{k: v for k, v in vars(args).items() if k != "func"}}, out)
    mapping.save(out / "mapping.jsonl")
    with open(out / "target_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *targets])
        for i, row in zip(ids, mapped.scores):
            w.writerow([i, *(repr(float(v)) for v in row)])
    result = {"targets": len(targets), "uncovered": mapped.uncovered, "out": str(out)}
    if args.manifest:
        recs = {r.id: r for r in read_manifest(args.manifest)}
        y = np.array([recs[i].labels for i in ids])
        rep = evaluate(mapped.scores, y, targets)
        rep.save(out)
        result.update(micro_auc=rep.micro_auc, macro_auc=rep.macro_auc, map=rep.map)
    _emit(result)


# -- stats -------------------------------------------------------------------------
def _read_columns(path, names):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = []
    for n in names:
        if rows and n not in rows[0]:
            raise ConfigError(f"column {n!r} not in {path}")
        cols.append(np.array([float(r[n]) for r in rows if r[n].strip() != ""]))
    return cols


def cmd_stats(args):
    if args.test in ("alpha", "agreement"):
        m = AnnotationMatrix.from_csv(args.matrix)
        if args.test == "alpha":
            res = krippendorff_alpha_nominal(m)
            _emit({"alpha": res.alpha, "no_variation": res.no_variation, "d_observed": res.d_observed,
                   "d_expected": res.d_expected, "items": res.n_items, "pairable_values": res.n_pairable})
        else:
            cons = majority_vote(m, args.threshold)
            agr = percent_agreement(m, cons)
            _emit({"mean": agr.mean, "per_rater": agr.per_rater, "threshold": args.threshold,
                   "positive_rate": float(np.nanmean(m.values))})
        return
    x, y = _read_columns(args.csv, [args.x, args.y])
    if args.test == "wilcoxon":
        r = wilcoxon_signed_rank(x, y)
        _emit(r._asdict())
    else:
        r = welch_t_test(x, y)
        _emit(r._asdict())


# -- sweep -------------------------------------------------------------------------
def cmd_sweep_range(args):
    """GSC-only mAP as a function of the POI square side."""
    cfg = resolve(args.config, {"geo": {"cache_dir": args.cache_dir}}, args.set)
    manifest = Path(args.manifest)
    records = read_manifest(manifest)
    n_labels = len(records[0].labels)
    class_names = _class_names(manifest, n_labels, cfg.get("class_names"))
    split = Split.load(args.split) if args.split else iterative_stratified_split(
        records, SplitSpec(tuple(cfg["split_spec"]["fractions"]), cfg["split_spec"]["seed"]))
    sides = [float(s) for s in args.sides.split(",")]
    out = Path(args.out)
    rows = []
    for side in sides:
        c = {**cfg, "geo": {**cfg["geo"], "side_m": side}}
        qcfg = _geo_config(c)
        stripped = [type(r)(r.id, r.audio_path, r.labels, geo=r.geo) for r in records]
        store = FeatureStore(stripped, manifest.parent, feature_config(c),
                             poi_source=lambda p, q=qcfg: fetch_pois(p, q))
        model_cfg = ModelConfig.from_dict({**c["model"], "variant": "gsc_only", "n_classes": n_labels,
                                           "d_gsc": store.gsc_dim})
        tcfg = TrainConfig.from_dict(c["train"])
        res = train(store, split, tcfg, model_cfg)
        rep = evaluate_model(res.model, store, split.test, res.norm, class_names, tcfg.threshold, tcfg.seed)
        rep.save(out / f"side_{int(side)}")
        rows.append({"side_m": side, "map": rep.map, **{f"ap_{n}": ap for n, ap in zip(class_names, rep.per_class_ap)}})
    write_resolved({**cfg, "sides": sides, "manifest": str(manifest.resolve())}, out)
    with open(out / "ap_vs_range.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    _emit({"sides": sides, "map": [r["map"] for r in rows], "out": str(out / "ap_vs_range.csv")})


# -- parser --------------------------------------------------------------------------
def _common(p):
    p.add_argument("--config", help="YAML/JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geoat", description=__doc__)
    ap.add_argument("--version", action="version", version=f"geoat {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    gsc = sub.add_parser("gsc", help="POI retrieval and GSC encoding").add_subparsers(dest="gsc_cmd", required=True)
    p = gsc.add_parser("fetch", help="query Overpass (or replay the cache) around coordinates")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--lat", type=float)
    p.add_argument("--lon", type=float)
    p.add_argument("--side-m", type=float)
    p.add_argument("--cache-dir")
    p.add_argument("--refresh", action="store_true", help="ignore cached responses")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gsc_fetch)
    p = gsc.add_parser("encode", help="encode POIs or descriptor tags into GSC vectors")
    _common(p)
    p.add_argument("--entities", help="JSONL written by 'gsc fetch'")
    p.add_argument("--manifest", help="manifest whose gsc_tags are encoded")
    p.add_argument("--embeddings", help="EmbeddingFile of descriptor vectors (imported encoder)")
    p.add_argument("--dim", type=int)
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gsc_encode)

    ds = sub.add_parser("dataset", help="dataset utilities").add_subparsers(dest="ds_cmd", required=True)
    p = ds.add_parser("split", help="iterative stratified train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", help="e.g. 0.7,0.15,0.15")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_split)

    sy = sub.add_parser("synth", help="synthetic benchmark").add_subparsers(dest="synth_cmd", required=True)
    p = sy.add_parser("generate", help="write a synthetic confounded world")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips-per-class", type=int, default=60)
    p.add_argument("--polyphony", type=float, default=0.15)
    p.add_argument("--check", action="store_true", help="also run the confound check")
    p.set_defaults(func=cmd_synth_generate)

    p = sub.add_parser("train", help="train one variant (optionally over several seeds)")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--variant")
    p.add_argument("--backbone")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated; re-splits per seed and evaluates on test")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split")
    p.add_argument("--subset", default="test", choices=("train", "val", "test"))
    p.add_argument("--baseline", help="report.json to compute per-class delta AP against")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("delta", help="per-class delta AP between two reports")
    p.add_argument("report")
    p.add_argument("baseline")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_delta)

    zs = sub.add_parser("zeroshot", help="zero-shot label mapping").add_subparsers(dest="zs_cmd", required=True)
    p = zs.add_parser("map", help="map source-label scores onto target labels")
    p.add_argument("--scores", required=True, help="CSV: id column then one column per source label")
    p.add_argument("--targets", required=True, help="text file, one target label per line")
    p.add_argument("--embeddings", help="word EmbeddingFile")
    p.add_argument("--mapping", help="precomputed mapping JSONL (skips building)")
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--manifest", help="manifest with target labels for scoring")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_zeroshot_map)

    st = sub.add_parser("stats", help="agreement and significance tests")
    st_sub = st.add_subparsers(dest="test", required=True)
    for name in ("alpha", "agreement"):
        p = st_sub.add_parser(name)
        p.add_argument("--matrix", required=True, help="CSV: rows raters, columns items")
        p.add_argument("--threshold", type=float, default=0.5)
        p.set_defaults(func=cmd_stats)
    for name in ("wilcoxon", "welch"):
        p = st_sub.add_parser(name)
        p.add_argument("--csv", required=True)
        p.add_argument("--x", "--a", dest="x", required=True, help="first column")
        p.add_argument("--y", "--b", dest="y", required=True, help="second column")
        p.set_defaults(func=cmd_stats)

    sw = sub.add_parser("sweep", help="parameter sweeps").add_subparsers(dest="sweep_cmd", required=True)
    p = sw.add_parser("range", help="GSC-only mAP versus POI square side")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split")
    p.add_argument("--sides", default="250,500,1000")
    p.add_argument("--cache-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_range)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (GeoAtError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
