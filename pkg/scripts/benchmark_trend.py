"""LOOCV-by-country R-squared table on synthetic cluster features."""
import argparse

from satinfra.benchmark import format_table
from satinfra.experiments import FEATURE_SETS, benchmark_table

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--label", default="wealthpooled", choices=["wealth", "wealthpooled"])
a = p.parse_args()
print(format_table(benchmark_table(a.seed, a.label), FEATURE_SETS))
