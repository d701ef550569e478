"""
Running the benchmark harness
=============================

Every experiment returns a table with one row per setting. The same
experiments are available from the command line as ``dipmark bench``.
"""

from dipmark import ReweightStrategy
from dipmark import bench

workload = bench.default_workload()

print(bench.calibrate(workload, trials=100, seed=0))
print(bench.detectability(workload, [ReweightStrategy.dip(0.45), ReweightStrategy.soft(0.5, 1.0)],
                          trials=50, seed=0))
print(bench.gamma_sweep(workload, ReweightStrategy.dip(0.45), [0.3, 0.5, 0.7], trials=30, seed=0))
