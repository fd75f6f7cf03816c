"""Magic Formula tire model.

Produces longitudinal force, lateral force and self-aligning moment from a
tire state. Combined slip uses cosine weighting of the respective other slip
quantity, camber enters as an equivalent slip-angle shift, and the aligning
moment comes from a linearly decaying pneumatic trail. Coefficients live in a
flat key-value parameter file (see ``data/tires_default.par``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import kernels

_AXLE_FIELDS = (
    "b_x", "c_x", "d_x", "e_x",
    "b_y", "c_y", "d_y", "e_y",
    "fz0", "d_load",
    "w_bx", "c_wx", "w_by", "c_wy",
    "c_gamma", "t0", "alpha_t0",
)


class TireParamError(ValueError):
    """Bad or missing tire coefficient."""


@dataclass(frozen=True)
class AxleTireParams:
    b_x: float
    c_x: float
    d_x: float
    e_x: float
    b_y: float
    c_y: float
    d_y: float
    e_y: float
    fz0: float
    d_load: float
    w_bx: float
    c_wx: float
    w_by: float
    c_wy: float
    c_gamma: float
    t0: float
    alpha_t0: float

    def __post_init__(self):
        for name in ("b_x", "c_x", "b_y", "c_y"):
            if getattr(self, name) <= 0:
                raise TireParamError(f"{name} must be > 0")
        if self.e_x > 1 or self.e_y > 1:
            raise TireParamError("curvature factors E must be <= 1")
        if self.fz0 <= 0:
            raise TireParamError("fz0 must be > 0")

    def packed(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in _AXLE_FIELDS], dtype=np.float64)


@dataclass(frozen=True)
class TireParams:
    front: AxleTireParams
    rear: AxleTireParams

    def packed(self) -> np.ndarray:
        """34-double array consumed by the kernels (front axle, then rear)."""
        return np.concatenate([self.front.packed(), self.rear.packed()])

    def axle(self, front: bool) -> AxleTireParams:
        return self.front if front else self.rear


@dataclass(frozen=True)
class TireState:
    """Per-tire state: load, slips, camber, toe and dynamic radius."""

    fz: float
    alpha: float
    kappa: float
    gamma: float = 0.0
    mu_toe: float = 0.0
    r_dyn: float = 0.33

    def __post_init__(self):
        if self.fz < 0:
            raise ValueError("fz must be >= 0")
        if self.r_dyn <= 0:
            raise ValueError("r_dyn must be > 0")


def _parse_kv_file(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TireParamError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def load_tire_params(path=None) -> TireParams:
    """Load a tire parameter file; default path loads the packaged set."""
    if path is None:
        text = resources.files("gripscore.data").joinpath("tires_default.par").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    values = _parse_kv_file(text)
    axles = {}
    for axle in ("front", "rear"):
        kwargs = {}
        for field in _AXLE_FIELDS:
            key = f"{axle}.{field}"
            if key not in values:
                raise TireParamError(f"missing coefficient {key}")
            try:
                kwargs[field] = float(values[key])
            except ValueError as exc:
                raise TireParamError(f"non-numeric value for {key}: {values[key]!r}") from exc
        axles[axle] = AxleTireParams(**kwargs)
    return TireParams(front=axles["front"], rear=axles["rear"])


def tire_forces(state: TireState, params: AxleTireParams) -> tuple[float, float, float]:
    """Forces (fx, fy) and aligning moment mz for one tire state."""
    return kernels.tire_forces(
        state.fz, state.alpha, state.kappa, state.gamma, params.packed(), 0
    )


def forces_grid(
    fz, alpha, kappa, gamma, params: AxleTireParams
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (fx, fy) over slip arrays.

    NumPy re-statement of the force model, kept separate from the kernels so
    grid sweeps provide an independent check of the scalar path.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    if fz <= 0.0:
        return np.zeros(np.broadcast(alpha, kappa).shape), np.zeros(
            np.broadcast(alpha, kappa).shape
        )
    p = params
    dfz = (fz - p.fz0) / p.fz0
    scale = 1.0 + p.d_load * dfz
    dx = p.d_x * scale * fz
    dy = p.d_y * scale * fz
    alpha_y = alpha + p.c_gamma * gamma
    bk = p.b_x * kappa
    fx0 = dx * np.sin(p.c_x * np.arctan(bk - p.e_x * (bk - np.arctan(bk))))
    ba = p.b_y * alpha_y
    fy0 = dy * np.sin(p.c_y * np.arctan(ba - p.e_y * (ba - np.arctan(ba))))
    fx = fx0 * np.cos(p.c_wx * np.arctan(p.w_bx * alpha_y))
    fy = fy0 * np.cos(p.c_wy * np.arctan(p.w_by * kappa))
    return fx, fy


@dataclass(frozen=True)
class SweepResult:
    alpha: float
    kappa: float
    force: float
    fx: float
    fy: float
    feasible: bool


def max_force_direction_sweep(
    state: TireState,
    params: AxleTireParams,
    direction: float,
    alpha_max: float,
    kappa_max: float,
    grid: int = 721,
    angle_tol: float = 0.01,
) -> SweepResult:
    """Brute-force reference for the per-tire maximization.

    Exhaustive grid over (alpha, kappa) in the slip box; keeps the largest
    force magnitude whose direction atan2(fy, fx) lies within ``angle_tol``
    of ``direction``. Returns ``feasible=False`` when no grid point matches.
    """
    if grid <= 0:
        raise ValueError("grid resolution must be > 0")
    if not (-math.pi < direction <= math.pi):
        raise ValueError("direction must be in (-pi, pi]")
    alphas = np.linspace(-alpha_max, alpha_max, grid)
    kappas = np.linspace(-kappa_max, kappa_max, grid)
    aa, kk = np.meshgrid(alphas, kappas, indexing="ij")
    fx, fy = forces_grid(state.fz, aa, kk, state.gamma, params)
    rho = np.hypot(fx, fy)
    phi = np.arctan2(fy, fx)
    dphi = np.abs(np.angle(np.exp(1j * (phi - direction))))
    ok = (dphi <= angle_tol) & (rho > 0.0)
    if state.fz <= 0.0:
        return SweepResult(0.0, 0.0, 0.0, 0.0, 0.0, True)
    if not ok.any():
        return SweepResult(math.nan, math.nan, 0.0, 0.0, 0.0, False)
    masked = np.where(ok, rho, -1.0)
    i, j = np.unravel_index(int(masked.argmax()), masked.shape)
    return SweepResult(
        float(aa[i, j]), float(kk[i, j]), float(rho[i, j]), float(fx[i, j]), float(fy[i, j]), True
    )


def pure_slip_peak(params: AxleTireParams, fz: float, lateral: bool, step: float = 1e-4):
    """Location and value of the pure-slip force peak via a dense 1-D sweep."""
    if lateral:
        s = np.arange(0.0, 0.35, step)
        _, f = forces_grid(fz, s, np.zeros_like(s), 0.0, params)
    else:
        s = np.arange(0.0, 0.35, step)
        f, _ = forces_grid(fz, np.zeros_like(s), s, 0.0, params)
    i = int(np.argmax(np.abs(f)))
    return float(s[i]), float(abs(f[i]))
