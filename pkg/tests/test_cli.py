import json
import shutil
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from satinfra import pipeline
from satinfra.cli import main
from satinfra.config import dump_config, load_config
from satinfra.fixture import write_fixture
from satinfra.io import read_png_geo, read_table, write_png


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    """Fixture with the first 2 km region only: a 2x2 grid of tiles."""
    root = tmp_path_factory.mktemp("fx")
    path = write_fixture(root, seed=1, region_km=2, epochs=1, ensemble_size=1)
    cfg = load_config(path)
    cfg.grid.regions = cfg.grid.regions[:1]
    path.write_text(dump_config(cfg))
    return root


def fresh(small, tmp_path):
    root = tmp_path / "fx"
    shutil.copytree(small, root)
    return root / "config.yaml"


def files(d):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file()) if d.exists() else []


def test_rasterize_smoke(small, tmp_path):
    cfg_path = fresh(small, tmp_path)
    assert main(["rasterize", "--config", str(cfg_path)]) == 0
    out = cfg_path.parent / "out"
    assert len(read_table(out / "grid.csv", ["cell_id"])) == 4
    for target in ("buildings", "roads"):
        assert len(list((out / "masks").glob(f"*_{target}.png"))) == 4
        assert len(list((out / "masks").glob(f"*_{target}.pgw"))) == 4
    first = (out / "grid.csv").read_text().splitlines()[0]
    assert first.startswith("# config_sha256=") and "seed=1" in first and "stage=rasterize" in first


def test_rasterize_rerun_byte_identical(small, tmp_path):
    cfg_path = fresh(small, tmp_path)
    out = cfg_path.parent / "out"
    main(["rasterize", "--config", str(cfg_path)])
    before = {f: (out / f).read_bytes() for f in files(out)}
    main(["rasterize", "--config", str(cfg_path), "--jobs", "2"])
    assert {f: (out / f).read_bytes() for f in files(out)} == before


def test_seed_override_recorded(small, tmp_path):
    cfg_path = fresh(small, tmp_path)
    main(["rasterize", "--config", str(cfg_path), "--seed", "99"])
    assert "seed=99" in (cfg_path.parent / "out" / "grid.csv").read_text().splitlines()[0]


def test_missing_input_exits_nonzero_without_outputs(small, tmp_path, capsys):
    cfg_path = fresh(small, tmp_path)
    (cfg_path.parent / "vectors.geojson").unlink()
    assert main(["rasterize", "--config", str(cfg_path)]) == 2
    rep = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rep["stage"] == "rasterize" and rep["error"] == "missing_input"
    assert rep["path"].endswith("vectors.geojson")
    assert files(cfg_path.parent / "out") == []


def test_downstream_stage_without_upstream_fails(small, tmp_path, capsys):
    cfg_path = fresh(small, tmp_path)
    assert main(["count", "--config", str(cfg_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "missing_input"


def test_failed_stage_removes_partial_outputs(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "sub" / "b.png"
    with pytest.raises(RuntimeError):
        with pipeline.Outputs() as outs:
            outs.add(a).write_text("x")
            outs.add(b).write_bytes(b"y")
            raise RuntimeError("boom")
    assert not a.exists() and not b.exists()


def fake_predictions(cfg):
    """Stand in for the network: rasterised labels at full intensity."""
    (cfg.out / "predictions").mkdir(exist_ok=True)
    for cell in read_table(cfg.out / "grid.csv", ["cell_id"]):
        for target in cfg.train.targets:
            src = cfg.out / "masks" / f"{cell['cell_id']}_{target}.png"
            mask, tf = read_png_geo(src)
            write_png(cfg.out / "predictions" / f"{cell['cell_id']}_{target}.png",
                      np.where(mask > 0, 255, 0).astype(np.uint8), tf)


def test_count_writes_four_rows_per_tile(small, tmp_path):
    cfg_path = fresh(small, tmp_path)
    assert main(["rasterize", "--config", str(cfg_path)]) == 0
    cfg = load_config(cfg_path)
    fake_predictions(cfg)
    assert main(["count", "--config", str(cfg_path)]) == 0
    per_tile = sorted((cfg.out / "metrics").glob("*.csv"))
    assert len(per_tile) == 4
    for p in per_tile:
        rows = read_table(p, pipeline.METRIC_COLUMNS)
        assert [float(r["threshold"]) for r in rows] == [5, 10, 15, 25]
    counts = read_table(cfg.out / "counts.csv", pipeline.COUNT_COLUMNS)
    assert len(counts) == 4 and all(float(r["road_m"]) >= 0 for r in counts)
    summary = read_table(cfg.out / "count_summary.csv", ["threshold", "selected"])
    assert sum(int(r["selected"]) for r in summary) == 1


def test_count_rejects_schema_mismatch(small, tmp_path, capsys):
    cfg_path = fresh(small, tmp_path)
    main(["rasterize", "--config", str(cfg_path)])
    cfg = load_config(cfg_path)
    fake_predictions(cfg)
    grid = cfg.out / "grid.csv"
    grid.write_text(grid.read_text().replace("min_lat", "lat_min"))
    assert main(["count", "--config", str(cfg_path)]) == 2
    assert "min_lat" in capsys.readouterr().err


def test_jobs_do_not_change_provenance(small):
    cfg = load_config(small / "config.yaml")
    assert pipeline.provenance(cfg, "x") == pipeline.provenance(replace(cfg, jobs=4), "x")


def test_console_entry_point(small, tmp_path):
    cfg_path = fresh(small, tmp_path)
    r = subprocess.run([sys.executable, "-m", "satinfra.cli", "rasterize", "--config", str(cfg_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "satinfra.cli", "judge", "--config", str(tmp_path / "nope.yaml")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and json.loads(r.stderr)["stage"] == "judge"
