"""Time the hot kernels with numba and with the interpreted fallback.

    python3 benchmarks/bench_kernels.py [--accesses N] [--traces N]

Each backend runs in its own interpreter because the switch is read at import.
"""

import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from mirage_lab._jit import USING_NUMBA
from mirage_lab.config import ExperimentConfig, FIXED_BUG
from mirage_lab.hierarchy import Hierarchy, L1Config
from mirage_lab.mirage import MirageCache, MirageConfig
from mirage_lab.occupancy_attack import collect_trace, key_from_hex
from mirage_lab.prng import seed_fixed
from mirage_lab.skew_index import derive_keys

accesses, traces = int(sys.argv[1]), int(sys.argv[2])

def timed(fn, warm):
    warm()
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0

def fresh():
    return Hierarchy(MirageCache(MirageConfig(data_lines=4096), derive_keys(1), seed_fixed(2)), L1Config(512))

addrs = np.random.default_rng(0).integers(0, 20000, accesses)
res = {"numba": USING_NUMBA}
res["access_stream"] = timed(lambda: fresh().run(addrs), lambda: fresh().run(addrs[:100]))
res["draws"] = timed(lambda: seed_fixed(1).draws_below(16384, accesses),
                     lambda: seed_fixed(1).draws_below(16384, 10))
cfg = ExperimentConfig(mirage=MirageConfig(data_lines=4096))
key = key_from_hex(cfg.victim_key)
run = lambda: [collect_trace(cfg, key, bytes([i % 256] * 16), FIXED_BUG) for i in range(traces)]
res["fixed_traces"] = timed(run, lambda: collect_trace(cfg, key, bytes(16), FIXED_BUG))
print(json.dumps(res))
"""


def run_backend(disable: bool, accesses: int, traces: int) -> dict:
    env = dict(os.environ)
    env.pop("MIRAGE_LAB_NO_NUMBA", None)
    if disable:
        env["MIRAGE_LAB_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKLOAD, str(accesses), str(traces)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--accesses", type=int, default=50_000)
    ap.add_argument("--traces", type=int, default=20)
    args = ap.parse_args()
    jit = run_backend(False, args.accesses, args.traces)
    py = run_backend(True, args.accesses, args.traces)
    print(f"{'workload':<16}{'numba s':>10}{'python s':>11}{'speedup':>10}")
    for k in ("access_stream", "draws", "fixed_traces"):
        print(f"{k:<16}{jit[k]:>10.4f}{py[k]:>11.4f}{py[k] / max(jit[k], 1e-9):>9.0f}x")


if __name__ == "__main__":
    main()
