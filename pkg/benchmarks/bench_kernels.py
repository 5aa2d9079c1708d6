"""Compare the numba kernels with their pure-numpy fallbacks.

Kernel timings call both implementations directly on the shapes a fast32
training step produces.  The end-to-end train-step timing runs once per
backend in a subprocess, because the backend is fixed at import time.

    python3 benchmarks/bench_kernels.py [--repeat N] [--skip-step]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from deep_galaxy import _kernels

# fast32, batch 32: conv lowering is 75 x 25088, fc1 is 32 x 18816 . 18816 x 24
CONV_X = (32, 3, 32, 32)
K, S, P = 5, 1, 0


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    x = rng.standard_normal(CONV_X)
    cols = _kernels.im2col_np(x, K, S, P)
    w = rng.standard_normal((96, cols.shape[0]))
    dyr = rng.standard_normal((96, cols.shape[1]))
    conv_out = rng.standard_normal((32, 96, 28, 28))
    pooled, idx = _kernels.maxpool2_forward_np(np.maximum(conv_out, 0))
    flat = rng.standard_normal((32, 18816))
    w1t = rng.standard_normal((18816, 24))
    cols_t = _kernels.transpose_np(cols)
    _, mask = _kernels.relu_forward_np(conv_out)
    return {
        "im2col": lambda m: m["im2col"](x, K, S, P),
        "col2im": lambda m: m["col2im"](cols, 32, 3, 32, 32, K, S, P),
        "conv matmul (96x75 . 75x25088)": lambda m: m["matmul"](w, cols),
        "conv dW matmul (96x25088 . 25088x75)": lambda m: m["matmul"](dyr, cols_t),
        "fc1 matmul (32x18816 . 18816x24)": lambda m: m["matmul"](flat, w1t),
        "transpose (75x25088)": lambda m: m["transpose"](cols),
        "relu forward": lambda m: m["relu_forward"](conv_out),
        "relu backward": lambda m: m["relu_backward"](conv_out, mask),
        "maxpool forward": lambda m: m["maxpool2_forward"](conv_out),
        "maxpool backward": lambda m: m["maxpool2_backward"](pooled, idx),
        "row sums (96x25088)": lambda m: m["rowsum"](dyr),
    }


NAMES = ["im2col", "col2im", "matmul", "transpose", "relu_forward", "relu_backward",
         "maxpool2_forward", "maxpool2_backward", "rowsum"]


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    np_impl = {n: getattr(_kernels, n + "_np") for n in NAMES}
    nb_impl = {n: getattr(_kernels, n + "_nb") for n in NAMES}
    print(f"{'kernel':<40}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, case in kernel_cases(rng).items():
        t_np = best_of(lambda: case(np_impl), repeat)
        t_nb = best_of(lambda: case(nb_impl), repeat)
        print(f"{name:<40}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


STEP_SCRIPT = """
import hashlib, json, time, numpy as np
from deep_galaxy import backend
from deep_galaxy.network import PROFILES, OptimizerState, TrainConfig, build_network, train_step
net = build_network(PROFILES["fast32"], 0)
x = np.random.default_rng(0).uniform(-0.5, 0.5, (32, 3, 32, 32))
y = np.arange(32) % 3
opt, tc = OptimizerState(net), TrainConfig()
train_step(net, x, y, opt, tc)
times = []
for _ in range({repeat}):
    t = time.perf_counter()
    train_step(net, x, y, opt, tc)
    times.append(time.perf_counter() - t)
print(json.dumps({{"backend": backend(), "seconds": min(times), "digest": hashlib.sha256(b"".join(p.tobytes() for p in net.parameters().values())).hexdigest()}}))
"""


def bench_step(repeat):
    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, DEEP_GALAXY_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", STEP_SCRIPT.format(repeat=repeat)],
                             env=env, check=True, capture_output=True, text=True).stdout
        r = json.loads(out.strip().splitlines()[-1])
        results[r["backend"]] = r
    print()
    print("fast32 train step, batch 32 (forward + backward + momentum update)")
    for name in ("numpy", "numba"):
        print(f"  {name:<6} {1e3 * results[name]['seconds']:8.1f} ms")
    print(f"  speedup {results['numpy']['seconds'] / results['numba']['seconds']:.1f}x")
    same = results["numpy"]["digest"] == results["numba"]["digest"]
    print(f"  parameters after {repeat + 1} steps bit-identical across backends: {same}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--skip-step", action="store_true")
    args = parser.parse_args(argv)
    if _kernels.numba is None:
        sys.exit("numba is not installed; nothing to compare")
    print(f"numba {_kernels.numba.__version__}, {_kernels.configure_threads()} thread(s)")
    bench_kernels(args.repeat)
    if not args.skip_step:
        bench_step(args.repeat)


if __name__ == "__main__":
    main()
