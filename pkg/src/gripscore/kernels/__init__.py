"""Kernel backend selection.

Imports the compiled extension when present, otherwise falls back to the
pure-Python implementations. Set ``GRIPSCORE_PURE_KERNELS=1`` to force the
fallback (used by the equivalence tests and the benchmark).
"""

import os

from . import pure

if os.environ.get("GRIPSCORE_PURE_KERNELS") == "1":
    _impl = pure
else:
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = pure

BACKEND = _impl.BACKEND
tire_forces = _impl.tire_forces
vehicle_eval = _impl.vehicle_eval
optcog_eval = _impl.optcog_eval
opttire_eval = _impl.opttire_eval
optcog_merit = _impl.optcog_merit
optcog_merit_grad = _impl.optcog_merit_grad
opttire_merit = _impl.opttire_merit
opttire_merit_grad = _impl.opttire_merit_grad

N_TP_AXLE = pure.N_TP_AXLE
N_VP = pure.N_VP
N_STATE = pure.N_STATE
N_VEH_OUT = pure.N_VEH_OUT
N_OC_PACK = pure.N_OC_PACK
N_OC_OUT = pure.N_OC_OUT
N_OT_PACK = pure.N_OT_PACK
N_OT_OUT = pure.N_OT_OUT
OC_REF = pure.OC_REF
