"""Build the fixture (if needed) and run every stage, timing each one."""
import argparse
import logging
import time
from pathlib import Path

from satinfra import pipeline
from satinfra.config import load_config
from satinfra.fixture import write_fixture

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("directory", nargs="?", default="fixture")
p.add_argument("--seed", type=int, default=0)
p.add_argument("--jobs", type=int, default=1)
a = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

cfg_path = Path(a.directory) / "config.yaml"
if not cfg_path.exists():
    write_fixture(a.directory, seed=a.seed)
cfg = load_config(cfg_path)
cfg.jobs = a.jobs
total = time.perf_counter()
for name in pipeline.STAGES:
    t0 = time.perf_counter()
    result = pipeline.RUNNERS[name](cfg)
    print(f"{name:<10} {time.perf_counter() - t0:7.1f} s")
print(f"{'total':<10} {time.perf_counter() - total:7.1f} s")
for label, table in result.items():
    print(f"\n[{label}]\n{table}")
