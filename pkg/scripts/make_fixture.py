"""Write the synthetic 64-tile fixture into a directory."""
import argparse

from satinfra.fixture import write_fixture

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("directory")
p.add_argument("--seed", type=int, default=0)
p.add_argument("--region-km", type=int, default=4)
p.add_argument("--epochs", type=int, default=6)
p.add_argument("--ensemble-size", type=int, default=3)
a = p.parse_args()
print(write_fixture(a.directory, seed=a.seed, region_km=a.region_km, epochs=a.epochs,
                    ensemble_size=a.ensemble_size))
