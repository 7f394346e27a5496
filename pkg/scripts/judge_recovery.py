"""How many deliberately corrupted labels the validity filter drops."""
import argparse

from satinfra.experiments import judge_recovery

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--rounds", type=int, default=2)
p.add_argument("--alpha-max", type=float, default=1.5)
a = p.parse_args()
r = judge_recovery(seed=a.seed, rounds=a.rounds, alpha_max=a.alpha_max)
print(f"corrupted dropped {100 * r.recall:.1f}%  clean dropped {100 * r.false_drop:.1f}%  "
      f"kept per round {r.kept_sizes}  {r.seconds:.0f} s")
