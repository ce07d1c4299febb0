"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python3 benchmarks/bench_kernels.py --campaign # also a whole flames campaign per backend

The campaign comparison runs in subprocesses because the backend is chosen
from FLAMES_DISABLE_NUMBA at import time.
"""

import argparse
import os
import subprocess
import sys
import tempfile
import timeit

import numpy as np

from flames import _kernels
from flames.reward import decode_program, generate_bug_corpus, write_corpus


def _cases(rng):
    logits = np.log(rng.dirichlet(np.ones(14 * 50)))
    q, n, p = rng.random(10), rng.integers(0, 20, 10).astype(float), rng.dirichlet(np.ones(10))
    prog = decode_program((4, 2, 8, 9, 7, 10, 13, 1))  # * + x0 x1 max x2 2
    inputs = rng.integers(-5, 6, size=(5, 4))
    return {
        "topk (700 logits, k=50)": (
            lambda: _kernels.topk_desc_numpy(logits, 50),
            lambda: _kernels.topk_desc_numba(logits, 50)),
        "policy scores (10 children)": (
            lambda: _kernels.policy_scores_numpy(_kernels.PUCB_VAR, q, n, p, 40.0, 1.414, 4.0, 10.0, 4.0),
            lambda: _kernels.policy_scores_numba(_kernels.PUCB_VAR, q, n, p, 40.0, 1.414, 4.0, 10.0, 4.0)),
        "interpreter (7 tokens x 5 cases)": (
            lambda: _kernels.eval_prefix_numpy(prog.ops, prog.args, inputs),
            lambda: _kernels.eval_prefix_numba(prog.ops, prog.args, inputs)),
    }


def bench_kernels(number):
    _kernels.warmup()
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn) in _cases(rng).items():
        t_np = min(timeit.repeat(np_fn, number=number, repeat=3)) / number * 1e6
        t_nb = min(timeit.repeat(nb_fn, number=number, repeat=3)) / number * 1e6
        print(f"{name:36s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x")


def bench_campaign(n_bugs):
    with tempfile.TemporaryDirectory() as tmp:
        corpus = os.path.join(tmp, "bugs.jsonl")
        write_corpus(corpus, generate_bug_corpus(7, n_bugs))
        for label, flag in (("numba", "0"), ("numpy", "1")):
            env = dict(os.environ, FLAMES_DISABLE_NUMBA=flag)
            code = (
                "import time; from flames import _kernels; _kernels.warmup();"
                "from flames.campaign import CampaignConfig, run_campaign;"
                f"cfg = CampaignConfig(algorithm='flames', corpus_path={corpus!r});"
                "t = time.perf_counter(); r = run_campaign(cfg);"
                "print(f'{time.perf_counter() - t:.2f}s plausible={r.plausible_count} "
                "backend_numba={_kernels.USE_NUMBA}')"
            )
            out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
            print(f"campaign ({n_bugs} bugs, {label}): {out.stdout.strip()}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--number", type=int, default=2000, help="calls per timing repeat")
    parser.add_argument("--campaign", action="store_true")
    parser.add_argument("--bugs", type=int, default=50)
    args = parser.parse_args()
    bench_kernels(args.number)
    if args.campaign:
        bench_campaign(args.bugs)


if __name__ == "__main__":
    main()
