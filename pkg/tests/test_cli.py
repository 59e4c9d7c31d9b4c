import csv
import json
import shutil

import numpy as np
import pytest

from geoat import __version__
from geoat.cli import main
from geoat.data import ClipRecord, write_manifest
from geoat.embfile import EmbeddingFile, read_embedding_file, write_embedding_file
from geoat.geo import ENDPOINT_ENV, GeoPoint, GscQueryConfig, request_digest
from geoat.metrics import EvalReport
from geoat.stats import AnnotationMatrix

SMALL = ["--set", "model.mlp_hidden=[16]", "--set", "model.d_emb=8", "--set", "model.gsc_hidden=[16]",
         "--set", "train.patience=1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 and out.strip() else out), err


@pytest.fixture(scope="module")
def world_copy(small_world, tmp_path_factory):
    dst = tmp_path_factory.mktemp("cli") / "world"
    shutil.copytree(small_world, dst)
    return dst


def test_synth_generate(tmp_path, capsys):
    code, res, _ = run(capsys, "synth", "generate", "--out", tmp_path / "w", "--clips-per-class", 3, "--seed", 2)
    assert code == 0 and res["clips"] == 24 and res["confounded"] == [6, 7]
    assert (tmp_path / "w" / "resolved_config.yaml").exists() and (tmp_path / "w" / "VERSION").exists()


def test_split_train_eval_delta_pipeline(world_copy, tmp_path, capsys):
    manifest = world_copy / "manifest.jsonl"
    before = manifest.read_bytes()
    code, res, _ = run(capsys, "dataset", "split", "--manifest", manifest, "--seed", 1, "--out", tmp_path / "split.json")
    assert code == 0 and res["train"] + res["val"] + res["test"] == 64
    assert (tmp_path / "split.json.resolved_config.yaml").exists()

    reports = {}
    for variant in ("audio_only", "late"):
        out = tmp_path / variant
        code, res, _ = run(capsys, "train", "--manifest", manifest, "--split", tmp_path / "split.json",
                           "--variant", variant, "--max-epochs", 2, "--out", out, *SMALL)
        assert code == 0, res
        for name in ("model.ckpt", "history.csv", "resolved_config.yaml", "VERSION"):
            assert (out / name).exists()
        code, res, _ = run(capsys, "eval", "--checkpoint", out / "model.ckpt", "--manifest", manifest,
                           "--split", tmp_path / "split.json", "--out", tmp_path / f"eval_{variant}")
        assert code == 0 and 0 <= res["map"] <= 1
        reports[variant] = tmp_path / f"eval_{variant}" / "report.json"
        rep = EvalReport.load(reports[variant])
        assert rep.variant == variant and len(rep.per_class_ap) == 8 and rep.class_names[6] == "helicopter"

    code, res, _ = run(capsys, "delta", reports["late"], reports["audio_only"], "--out", tmp_path / "delta.json")
    assert code == 0 and sum(res.values()) == 8
    doc = json.loads((tmp_path / "delta.json").read_text())
    assert len(doc["delta"]) == 8
    assert manifest.read_bytes() == before  # inputs untouched


def test_train_rerun_from_resolved_config(world_copy, tmp_path, capsys):
    manifest = world_copy / "manifest.jsonl"
    code, first, _ = run(capsys, "train", "--manifest", manifest, "--variant", "inter", "--max-epochs", 2,
                         "--seed", 3, "--out", tmp_path / "a", *SMALL)
    assert code == 0
    code, again, _ = run(capsys, "train", "--config", tmp_path / "a" / "resolved_config.yaml", "--out", tmp_path / "b")
    assert code == 0 and again["runs"][0]["sha256"] == first["runs"][0]["sha256"]


def test_train_multi_seed_summary(world_copy, tmp_path, capsys):
    code, res, _ = run(capsys, "train", "--manifest", world_copy / "manifest.jsonl", "--variant", "gsc_only",
                       "--seeds", "0,1", "--max-epochs", 2, "--out", tmp_path / "ms", *SMALL)
    assert code == 0 and set(res["summary"]["map"]) == {"mean", "std"}
    for s in (0, 1):
        assert (tmp_path / "ms" / f"seed{s}" / "report.json").exists()
    assert (tmp_path / "ms" / "summary.json").exists()


def test_gsc_encode_manifest(world_copy, tmp_path, capsys):
    code, res, _ = run(capsys, "gsc", "encode", "--manifest", world_copy / "manifest.jsonl", "--dim", 32,
                       "--out", tmp_path / "g.emb")
    assert code == 0 and res["vectors"] == 64 and res["dim"] == 32
    assert read_embedding_file(tmp_path / "g.emb").dim == 32


def _overpass(tags_list):
    els = [{"type": "node", "id": i + 1, "lat": 0.0, "lon": 0.0, "tags": t} for i, t in enumerate(tags_list)]
    return json.dumps({"elements": els}).encode()


def _geo_manifest(tmp_path, cache):
    """Three labels whose POI context differs; the cache is preseeded so no request is made."""
    kinds = [{"amenity": "school"}, {"natural": "water"}, {"highway": "bus_stop"}]
    recs = []
    for i in range(15):
        k = i % 3
        p = GeoPoint(10.0 + i * 0.01, 20.0)
        recs.append(ClipRecord(f"g{i}", "none.wav", [int(j == k) for j in range(3)], geo=p))
        for side in (250.0, 1000.0):
            cfg = GscQueryConfig(side_m=side, cache_dir=cache, endpoint="http://127.0.0.1:9/none")
            cache.mkdir(exist_ok=True)
            body = _overpass([kinds[k]] * 2 if side == 1000.0 else [])
            (cache / f"{request_digest(p, cfg)}.json").write_bytes(body)
    write_manifest(tmp_path / "geo.jsonl", recs)
    return tmp_path / "geo.jsonl"


def test_gsc_fetch_from_cache(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(ENDPOINT_ENV, "http://127.0.0.1:9/none")
    manifest = _geo_manifest(tmp_path, tmp_path / "cache")
    code, res, _ = run(capsys, "gsc", "fetch", "--manifest", manifest, "--cache-dir", tmp_path / "cache",
                       "--out", tmp_path / "ents.jsonl")
    assert code == 0 and res == {"points": 15, "entities": 30, "out": str(tmp_path / "ents.jsonl")}
    code, res, _ = run(capsys, "gsc", "encode", "--entities", tmp_path / "ents.jsonl", "--out", tmp_path / "e.emb")
    assert code == 0 and res["vectors"] == 15 and res["empty_context"] == 0


def test_sweep_range(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(ENDPOINT_ENV, "http://127.0.0.1:9/none")
    manifest = _geo_manifest(tmp_path, tmp_path / "cache")
    code, res, _ = run(capsys, "sweep", "range", "--manifest", manifest, "--sides", "250,1000",
                       "--cache-dir", tmp_path / "cache", "--out", tmp_path / "sweep",
                       "--set", "model.gsc_hidden=[16]", "--set", "train.max_epochs=20",
                       "--set", "train.patience=10", "--set", "train.batch_size=4", "--set", "train.lr=0.01")
    assert code == 0, res
    assert res["sides"] == [250.0, 1000.0]
    assert res["map"][1] > res["map"][0]  # empty context carries no label signal
    rows = list(csv.DictReader(open(tmp_path / "sweep" / "ap_vs_range.csv")))
    assert [float(r["side_m"]) for r in rows] == [250.0, 1000.0]
    assert (tmp_path / "sweep" / "resolved_config.yaml").exists()


def test_stats_commands(tmp_path, capsys):
    AnnotationMatrix([[1, 1, 0, 0], [1, 0, 0, 0]]).to_csv(tmp_path / "m.csv")
    code, res, _ = run(capsys, "stats", "alpha", "--matrix", tmp_path / "m.csv")
    assert code == 0 and res["alpha"] == pytest.approx(0.533333333, abs=1e-9)
    code, res, _ = run(capsys, "stats", "agreement", "--matrix", tmp_path / "m.csv")
    assert code == 0 and res["mean"] == pytest.approx(0.875)
    (tmp_path / "cols.csv").write_text("a,b,c\n1,1,2\n2,2,3.5\n3,3,4\n4,4,5.2\n5,5,6\n")
    code, res, _ = run(capsys, "stats", "wilcoxon", "--csv", tmp_path / "cols.csv", "--x", "c", "--y", "a")
    assert code == 0 and res["W"] == 0 and res["p"] == pytest.approx(0.0625)
    code, res, _ = run(capsys, "stats", "welch", "--csv", tmp_path / "cols.csv", "--a", "a", "--b", "c")
    assert code == 0 and 0 < res["p"] < 1


def test_operational_error_is_json_exit_1(tmp_path, capsys):
    (tmp_path / "cols.csv").write_text("a,b\n1,1\n2,2\n3,3\n")
    code, _, err = run(capsys, "stats", "wilcoxon", "--csv", tmp_path / "cols.csv", "--x", "a", "--y", "b")
    assert code == 1 and json.loads(err)["error"] == "AllZeroDifferences"
    code, _, err = run(capsys, "dataset", "split", "--manifest", tmp_path / "missing.jsonl", "--out", tmp_path / "s")
    assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # --out missing
    assert exc.value.code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0 and __version__ in capsys.readouterr().out


def test_zeroshot_map(tmp_path, capsys):
    words = {"dog": [1.0, 0, 0], "bark": [0.95, 0.1, 0], "rain": [0, 1.0, 0], "car": [0, 0, 1.0]}
    write_embedding_file(tmp_path / "w.emb", EmbeddingFile.from_mapping({k: np.array(v) for k, v in words.items()}))
    (tmp_path / "scores.csv").write_text("id,dog bark,rain,car\nx1,0.9,0.1,0.2\nx2,0.2,0.8,0.4\nx3,0.1,0.3,0.7\n")
    (tmp_path / "targets.txt").write_text("dog\nrain\n")
    write_manifest(tmp_path / "m.jsonl", [ClipRecord("x1", "a", [1, 0]), ClipRecord("x2", "b", [0, 1]),
                                          ClipRecord("x3", "c", [0, 1])])
    code, res, _ = run(capsys, "zeroshot", "map", "--scores", tmp_path / "scores.csv", "--targets",
                       tmp_path / "targets.txt", "--embeddings", tmp_path / "w.emb", "--manifest",
                       tmp_path / "m.jsonl", "--out", tmp_path / "zs")
    assert code == 0 and res["uncovered"] == [] and res["micro_auc"] is not None
    rows = list(csv.reader(open(tmp_path / "zs" / "target_scores.csv")))
    assert rows[0] == ["id", "dog", "rain"] and [float(v) for v in rows[1][1:]] == [0.9, 0.1]
    # the saved mapping can be replayed directly
    code, res2, _ = run(capsys, "zeroshot", "map", "--scores", tmp_path / "scores.csv", "--targets",
                        tmp_path / "targets.txt", "--mapping", tmp_path / "zs" / "mapping.jsonl",
                        "--out", tmp_path / "zs2")
    assert code == 0
    assert (tmp_path / "zs2" / "target_scores.csv").read_text() == (tmp_path / "zs" / "target_scores.csv").read_text()
