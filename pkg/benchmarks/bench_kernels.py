"""Compare the numba and numpy statevector kernels.

Each backend runs in its own subprocess because the choice is fixed at
import time by ``SGS_DISABLE_NUMBA``.

    python3 benchmarks/bench_kernels.py [--qubits 16] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from sgstates import _kernels
from sgstates.lattice import LatticeSpec, build_hamiltonian, apply_hamiltonian
from sgstates.tensor import random_unitary

n, repeat = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.Generator(np.random.PCG64(0))
psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
gate = random_unitary(4, rng)
rows = 4
h = build_hamiltonian("heisenberg", LatticeSpec(rows, n // rows))

def best(fn):
    fn()  # warm-up, includes jit compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

gate_t = best(lambda: [_kernels.apply_gate(psi, gate, (t, t + 1), 2) for t in range(n - 1)])
matvec_t = best(lambda: apply_hamiltonian(h, psi))
print(json.dumps({"backend": _kernels.backend(), "apply_gate": gate_t, "matvec": matvec_t}))
"""


def run_backend(disable: bool, qubits: int, repeat: int) -> dict:
    env = dict(os.environ, SGS_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run(
        [sys.executable, "-c", CHILD, str(qubits), str(repeat)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--qubits", type=int, default=16, help="statevector qubits (multiple of 4)")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if args.qubits % 4:
        p.error("--qubits must be a multiple of 4")
    res = [run_backend(False, args.qubits, args.repeat), run_backend(True, args.qubits, args.repeat)]
    print(f"{'kernel':<12}" + "".join(f"{r['backend']:>12}" for r in res) + f"{'speedup':>10}")
    for key in ("apply_gate", "matvec"):
        nb, npy = res[0][key], res[1][key]
        print(f"{key:<12}{nb * 1e3:>10.2f}ms{npy * 1e3:>10.2f}ms{npy / nb:>9.2f}x")


if __name__ == "__main__":
    main()
