import json

import numpy as np
import pytest

from pednet.cli import main
from pednet.net import intersections, parse_street_network
from pednet.synthetic import grid_city

FAST = ["--set", "refine.iterations=30"]


@pytest.fixture
def streets(tmp_path):
    p = tmp_path / "streets.geojson"
    p.write_text(json.dumps(grid_city(3, 3)))
    return p


def features(path, geom=None):
    doc = json.loads(path.read_text())
    return [f for f in doc["features"] if geom is None or f["geometry"]["type"] == geom]


def test_infer_grid_counts(tmp_path, streets):
    assert main(["infer", str(streets), "--out-dir", str(tmp_path)]) == 0
    edges = features(tmp_path / "hypothesis.geojson", "LineString")
    kinds = [f["properties"]["footway"] for f in edges]
    g = parse_street_network(grid_city(3, 3))
    arms = sum(g.degree(n) for n in intersections(g))
    assert arms == 40
    assert kinds.count("crossing") == arms and kinds.count("link") == 2 * arms
    curbs = [f for f in features(tmp_path / "hypothesis.geojson", "Point") if f["properties"].get("barrier") == "kerb"]
    assert len(curbs) == 2 * arms


def test_infer_empty(tmp_path):
    p = tmp_path / "empty.geojson"
    p.write_text('{"type": "FeatureCollection", "features": []}')
    assert main(["infer", str(p), "--out-dir", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "hypothesis.geojson").read_text())
    assert doc["type"] == "FeatureCollection" and doc["features"] == []


def test_infer_malformed(tmp_path, capsys):
    p = tmp_path / "bad.geojson"
    p.write_text("{nope")
    assert main(["infer", str(p), "--out-dir", str(tmp_path)]) == 1
    assert "MalformedFeature" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, streets):
    assert main(["infer", str(streets), "--out-dir", str(tmp_path), "--set", "refine.bogus=1"]) == 1


def test_eval_pred_equals_gt(tmp_path, streets):
    main(["infer", str(streets), "--out-dir", str(tmp_path)])
    h = str(tmp_path / "hypothesis.geojson")
    assert main(["eval", h, h, "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    for cls in ("sidewalk", "crossing"):
        assert (rep[cls]["precision"], rep[cls]["recall"], rep[cls]["f1"]) == (1.0, 1.0, 1.0)


def test_rasterize_and_refine(tmp_path, streets):
    main(["infer", str(streets), "--out-dir", str(tmp_path)])
    h = str(tmp_path / "hypothesis.geojson")
    masks = tmp_path / "masks"
    assert main(["rasterize", h, "--probabilities", "--out-dir", str(masks)]) == 0
    assert sorted(p.name for p in masks.iterdir()) == [
        "corner_bulb.json", "corner_bulb.png", "crossing.json", "crossing.png", "sidewalk.json", "sidewalk.png"
    ]
    assert main(["refine", h, "--masks", str(masks), "--out-dir", str(tmp_path), *FAST]) == 0
    refined = features(tmp_path / "refined.geojson", "LineString")
    assert all(isinstance(f["properties"]["confidence"], float) for f in refined)

    (masks / "sidewalk.json").unlink()
    assert main(["refine", h, "--masks", str(masks), "--out-dir", str(tmp_path / "r2"), *FAST]) == 1


def test_rasterize_labels_and_pixel_eval(tmp_path, streets):
    main(["infer", str(streets), "--out-dir", str(tmp_path)])
    h = str(tmp_path / "hypothesis.geojson")
    assert main(["rasterize", h, "--out-dir", str(tmp_path), "--set", "raster.resolution=1.0"]) == 0
    from pednet.raster import read_label_raster

    lab = read_label_raster(tmp_path / "labels.png")
    assert set(np.unique(lab.values)) == {0, 1, 2, 3}
    lp = str(tmp_path / "labels.png")
    assert main(["eval", h, h, "--pred-labels", lp, "--gt-labels", lp, "--out-dir", str(tmp_path)]) == 0
    px = json.loads((tmp_path / "pixel_report.json").read_text())
    assert px["accuracy"] == 1.0 and px["corner_instances"]["precision"] == 1.0


def test_rasterize_offline_tiles(tmp_path, streets, monkeypatch, capsys):
    monkeypatch.setenv("PEDNET_TILE_CACHE", str(tmp_path / "cache"))
    main(["infer", str(streets), "--out-dir", str(tmp_path)])
    args = [
        "rasterize", str(tmp_path / "hypothesis.geojson"), "--out-dir", str(tmp_path), "--offline", "--fetch-tiles",
        "--bbox=-122.3325,47.6060,-122.3318,47.6064", "--set", 'tiles.template="https://t.example.com/{q}.jpg"',
    ]
    assert main(args) == 1
    assert "OfflineCacheMiss" in capsys.readouterr().err


def test_lint_jsonl(tmp_path, streets):
    main(["infer", str(streets), "--out-dir", str(tmp_path)])
    doc = json.loads((tmp_path / "hypothesis.geojson").read_text())
    # drop one link so its curb loses the sidewalk connection
    link = next(f for f in doc["features"] if f["properties"].get("footway") == "link")
    doc["features"].remove(link)
    bad = tmp_path / "bad.geojson"
    bad.write_text(json.dumps(doc))
    assert main(["lint", str(bad), "--streets", str(streets), "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "lint.jsonl").read_text().splitlines()
    recs = [json.loads(x) for x in lines]
    ids = {f["id"] for f in doc["features"]}
    assert recs and all(r["id"] in ids for r in recs)
    assert {r["kind"] for r in recs} == {"DisconnectedCrossing"}


def test_pipeline_outputs(tmp_path, streets):
    out = tmp_path / "run"
    assert main(["pipeline", str(streets), "--out-dir", str(out), "--seed", "2", *FAST]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["seed"] == 2 and man["stages"] == ["infer", "masks", "refine", "eval"]
    for name in ("hypothesis.geojson", "refined.geojson", "report.json", "lint.jsonl"):
        assert name in man["outputs"]
    rep = json.loads((out / "report.json").read_text())
    assert {"precision", "recall", "f1"} <= set(rep["sidewalk"]) and {"f1"} <= set(rep["crossing"])


def test_pipeline_failure_leaves_partial(tmp_path, streets):
    masks = tmp_path / "masks"
    masks.mkdir()
    out = tmp_path / "run"
    assert main(["pipeline", str(streets), "--masks", str(masks), "--out-dir", str(out), *FAST]) == 1
    assert (out / "manifest.json.partial").exists() and not (out / "manifest.json").exists()
