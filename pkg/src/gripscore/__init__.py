"""gripscore: tire-grip exploitation scoring for race telemetry.

Per telemetry sample, two constrained optimizations quantify the unused grip
potential (maximum CoG acceleration on the driven trajectory; maximum
independent per-tire force) and reduce to three track-independent driver
scores. An LSTM surrogate predicts the scores directly from telemetry at a
fraction of the optimizer's cost.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
