import numpy as np
import pytest

from eventpol import scenes
from eventpol import simulate as sim


def uniform_scene(
    element="air",
    size=8,
    frames=2,
    c=0.1,
    eta=0.0,
    phi1=0.12,
    phi2=0.57,
    noise=None,
    step_div=50_000,
    seed=0,
):
    """Small single-region scene used across the reconstruction tests.

    Nonzero plate offsets keep the modulated intensity strictly positive at
    the sampling resolution (perfectly aligned plates produce exact
    extinction at isolated angles).
    """
    return scenes.SceneSpec(
        width=size,
        height=size,
        frames=frames,
        regions=[
            scenes.Region(rect=(0, 0, size, size), matrix=scenes.element_matrix(element))
        ],
        phi_calib1=phi1,
        phi_calib2=phi2,
        sensor=sim.SensorConfig(c_on=c, c_off=c, eta=eta, step_div=step_div),
        noise=noise,
        seed=seed,
    )


@pytest.fixture
def air_recording():
    return sim.simulate_recording(uniform_scene())
