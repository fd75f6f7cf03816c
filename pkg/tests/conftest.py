import numpy as np
import pytest

from gripscore import synth
from gripscore.tire_model import load_tire_params
from gripscore.vehicle_model import load_vehicle_params


@pytest.fixture(scope="session")
def vehicle():
    return load_vehicle_params()


@pytest.fixture(scope="session")
def tires():
    return load_tire_params()


@pytest.fixture(scope="session")
def short_lap(vehicle, tires):
    """One deterministic lap on the shorter canned track."""
    track = synth.canned_track("synt-b")
    return synth.generate_lap(track, synth.canned_driver("D1"), vehicle, tires, seed=11)


def truncate_lap(lap, n):
    """First n samples of a lap (keeps channel consistency)."""
    from gripscore.telemetry import LapTelemetry

    return LapTelemetry(
        lap_id=lap.lap_id,
        driver_id=lap.driver_id,
        track_id=lap.track_id,
        sample_rate=lap.sample_rate,
        channels={k: np.array(v[:n]) for k, v in lap.channels.items()},
    )


@pytest.fixture(scope="session")
def tiny_lap(short_lap):
    """A 600-sample slice for fast I/O and pipeline tests."""
    return truncate_lap(short_lap, 600)


def mkstate(vehicle, **kw):
    """Hand-built vehicle state with sane defaults."""
    from gripscore.vehicle_model import VehicleState

    base = dict(
        psi_dot=0.0,
        v=50.0,
        fz=(3000.0, 3000.0, 3100.0, 3100.0),
        mu_toe=(vehicle.toe_front, -vehicle.toe_front, vehicle.toe_rear, -vehicle.toe_rear),
        b_half=vehicle.half_tracks,
        d_x_aero=0.0,
        d_y_aero=0.0,
        gamma=(vehicle.camber_front, -vehicle.camber_front,
               vehicle.camber_rear, -vehicle.camber_rear),
        r_dyn=(0.327,) * 4,
        n_engine=6000.0,
        i_tot=5.0,
        delta=0.0,
        beta=0.0,
        kappa=(0.0, 0.0, 0.0, 0.0),
    )
    base.update(kw)
    return VehicleState(**base)
