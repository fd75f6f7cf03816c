#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the three hot paths (tire forces, full vehicle evaluation, fused
optimizer merit gradient) on states sampled from a synthetic lap, and one
end-to-end per-sample optimization with each backend.

Run after `pip install -e .`:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from gripscore import synth
from gripscore.kernels import pure
from gripscore.opt_cog import build_pack, optimize_cog
from gripscore.pipeline import state_from_lap
from gripscore.tire_model import load_tire_params
from gripscore.vehicle_model import evaluate, load_vehicle_params

try:
    from gripscore.kernels import _fast
except ImportError:
    _fast = None


def timeit(fn, number):
    t0 = time.perf_counter()
    for _ in range(number):
        fn()
    return (time.perf_counter() - t0) / number


def main():
    vehicle = load_vehicle_params()
    tires = load_tire_params()
    track = synth.canned_track("synt-b")
    lap = synth.generate_lap(track, synth.canned_driver("D1"), vehicle, tires, seed=1)
    st = state_from_lap(lap, 2500)
    init = evaluate(st, vehicle, tires)
    state = st.packed()
    vp = vehicle.packed()
    tp = tires.packed()
    pack = build_pack(st, vehicle, tires, init, vehicle.br_drv)
    z = np.array([st.delta, st.beta, *st.kappa])
    lam = np.zeros(5)
    mu = np.zeros(11)
    lo = np.array([-vehicle.delta_max, -vehicle.beta_max, *(-vehicle.kappa_max,) * 4])
    hi = -lo

    backends = [("pure", pure)]
    if _fast is not None:
        backends.append(("compiled", _fast))

    rows = {}
    for name, mod in backends:
        out_v = np.zeros(pure.N_VEH_OUT) if name == "compiled" else [0.0] * pure.N_VEH_OUT
        grad = np.zeros(6) if name == "compiled" else [0.0] * 6
        rows[name] = {
            "tire_forces": timeit(lambda: mod.tire_forces(4000.0, 0.05, -0.03, -0.05, tp, 0), 20000),
            "vehicle_eval": timeit(lambda: mod.vehicle_eval(state, vp, tp, out_v), 5000),
            "merit_grad": timeit(
                lambda: mod.optcog_merit_grad(z, pack, lam, mu, 1e3, lo, hi, 1e-6, grad), 2000
            ),
        }

    print(f"{'kernel':<14}" + "".join(f"{n:>14}" for n in rows) +
          ("" if len(rows) < 2 else f"{'speedup':>10}"))
    for key in ("tire_forces", "vehicle_eval", "merit_grad"):
        cells = "".join(f"{rows[n][key] * 1e6:>12.2f}us" for n in rows)
        if len(rows) == 2:
            cells += f"{rows['pure'][key] / rows['compiled'][key]:>9.1f}x"
        print(f"{key:<14}" + cells)

    # end-to-end sample optimization per backend
    import os
    import subprocess
    import sys

    print("\nend-to-end optimize_cog on one sample:")
    for env_val, label in (("0", "compiled"), ("1", "pure")):
        if env_val == "0" and _fast is None:
            continue
        code = (
            "import time, numpy as np\n"
            "from gripscore import synth\n"
            "from gripscore.opt_cog import optimize_cog\n"
            "from gripscore.pipeline import state_from_lap\n"
            "from gripscore.tire_model import load_tire_params\n"
            "from gripscore.vehicle_model import load_vehicle_params\n"
            "vehicle = load_vehicle_params(); tires = load_tire_params()\n"
            "lap = synth.generate_lap(synth.canned_track('synt-b'),\n"
            "    synth.canned_driver('D1'), vehicle, tires, seed=1)\n"
            "st = state_from_lap(lap, 2500)\n"
            "t0 = time.perf_counter()\n"
            "for _ in range(20): optimize_cog(st, vehicle, tires)\n"
            "print('%.1f ms' % ((time.perf_counter()-t0)/20*1e3))\n"
        )
        env = dict(os.environ, GRIPSCORE_PURE_KERNELS=env_val)
        out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                             text=True, env=env)
        print(f"  {label}: {out.stdout.strip() or out.stderr.strip()}")


if __name__ == "__main__":
    main()
