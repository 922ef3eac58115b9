"""Time the RNN forward/backward kernels and a full gradient step per backend.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes mirror training: a minibatch of ``B`` states with ``m`` entities,
window ``L`` and ``F`` price channels.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pimtl import _kernels, policy as pol

SHAPES = [
    # (B, m, L, F, D)
    (32, 10, 9, 3, 10),
    (50, 10, 29, 3, 25),
    (128, 10, 29, 3, 25),
]


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (and numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_shape(B, m, L, F, D, repeat, backends):
    rng = np.random.default_rng(0)
    params = pol.init_near_zero(D, F, 0.1, rng)
    seqs = rng.normal(size=(B * m, L, F))
    prev = np.full(B * m, 1.0 / m)
    dscore = rng.normal(size=B * m)
    states = rng.normal(1.0, 0.01, size=(B, m, 1 + L * F))
    states[..., 0] = 1.0 / m

    def objective(a):
        return a[:, 0], np.eye(m)[np.zeros(len(a), dtype=int)]

    w = (params.encoder_input_weights, params.encoder_recurrent_weights, params.encoder_bias,
         params.score_weights, params.score_bias)
    out = {}
    for name in backends:
        fwd, bwd = _kernels.get_kernels(name)
        _, hs = fwd(*w, seqs, prev)
        out[name] = (
            best_of(lambda: fwd(*w, seqs, prev), repeat),
            best_of(lambda: bwd(*w, seqs, prev, hs, dscore, m), repeat),
            best_of(lambda: pol.value_and_grad(params, states, objective, name), repeat),
        )
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    print(f"{'B':>4} {'m':>3} {'L':>3} {'D':>3}  {'backend':<6} {'forward ms':>10} {'backward ms':>11} {'grad step ms':>12}")
    for B, m, L, F, D in SHAPES:
        res = bench_shape(B, m, L, F, D, args.repeat, backends)
        for name, (f, b, g) in res.items():
            print(f"{B:>4} {m:>3} {L:>3} {D:>3}  {name:<6} {f * 1e3:>10.3f} {b * 1e3:>11.3f} {g * 1e3:>12.3f}")
        if "numba" in res:
            speed = res["numpy"][2] / res["numba"][2]
            print(f"{'':>17}numba speed-up on the gradient step: {speed:.1f}x")


if __name__ == "__main__":
    main()
