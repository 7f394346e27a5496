"""Noise trials: does the mean of three noisy masks beat the median member?"""
import argparse

from satinfra.experiments import ensemble_gain

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--trials", type=int, default=100)
a = p.parse_args()
print(f"ensemble >= median member in {ensemble_gain(a.trials)} of {a.trials} trials")
