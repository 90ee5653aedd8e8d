"""Time the compiled kernels against the NumPy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--size 128] [--repeat 3]

Both backends run the theta-subproblem Newton solve and the CG solve of
the depth step on the same sphere scene; the script prints the best wall
time per backend and the largest difference between their outputs.
"""

import argparse
import time

import numpy as np

from mvsfs import kernels
from mvsfs.evalgen import L3, ScenePreset, generate_scene, smooth_depth
from mvsfs.solver import (
    SFSProblem,
    SolverOptions,
    SolverState,
    data_weights,
    gradient_adjoint,
    gradient_normal_matrix,
)


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    try:
        kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1

    sc = generate_scene(ScenePreset(kind="sphere", size=args.size), L3)
    opts = SolverOptions()
    prob = SFSProblem.build(sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask, opts.grad_scheme)
    z0 = prob.domain.gather(smooth_depth(sc.depth, sc.mask, 8))
    st = SolverState.start(prob, z0, opts.beta0)
    d = prob.domain
    g = d.gradient(d.gather(sc.depth))
    newton_args = (st.theta, g, None, st.duals, st.beta, st.beta, d.xt, d.yt, d.intr.f,
                   prob.rho, prob.I, prob.L, None, None, 0.0, opts.newton_tol, opts.newton_max_iters)

    W, r = data_weights(prob, st.theta)
    W[:, 0, 0] += st.beta
    W[:, 1, 1] += st.beta
    M = gradient_normal_matrix(d, W)
    M.sort_indices()
    rhs = gradient_adjoint(d, r)
    pcg_args = (M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, rhs, z0,
                opts.cg_tol, opts.cg_max_iters)

    print(f"{d.n} pixels, best of {args.repeat}")
    for name, fn, a in [("theta_newton", kernels.theta_newton, newton_args), ("pcg", kernels.pcg, pcg_args)]:
        tp, op = _best(lambda: fn(*a, backend="python"), args.repeat)
        tc, oc = _best(lambda: fn(*a, backend="cython"), args.repeat)
        diff = float(np.max(np.abs(op[0] - oc[0])))
        print(f"{name:13s} python {tp * 1e3:9.2f} ms  cython {tc * 1e3:9.2f} ms  "
              f"speed-up {tp / tc:6.1f}x  max diff {diff:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
