import warnings

import numpy as np
import pytest

from specpush.dynamics import Configuration, SceneModel, SettleTimeout, settle
from specpush.geometry import ConvexPolygon, Circle, Pose2, uniform_inertia

BOX = ConvexPolygon.box(0.1, 0.1)
MASS = 0.1
FAR = np.array([0.0, 10.0])  # finger parked out of reach


def ground(width=4.0, x=0.0):
    return (ConvexPolygon.box(width, 0.2), Pose2(x, -0.1))


def box_scene(env=None, mu=0.5, mu_finger=0.5, mass=MASS, shape=BOX, **kw) -> SceneModel:
    env = (ground(),) if env is None else env
    return SceneModel(shape, mass, uniform_inertia(shape, mass), environment=env,
                      friction_object_env=mu, friction_object_finger=mu_finger, **kw)


def settled(scene, pose, finger=FAR):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SettleTimeout)
        return settle(scene, Configuration(finger, pose))


@pytest.fixture(scope="session")
def ground_scene():
    return box_scene()


@pytest.fixture(scope="session")
def free_scene():
    return box_scene(env=())


@pytest.fixture(scope="session")
def ice_scene():
    return box_scene(mu=0.0)


@pytest.fixture(scope="session")
def rest_pose(ground_scene):
    return settled(ground_scene, Pose2(0.0, 0.05, 0.0)).q_o


@pytest.fixture(scope="session")
def disk_scene():
    disk = Circle(0.05)
    return SceneModel(disk, MASS, uniform_inertia(disk, MASS), environment=(ground(),))


# acceptance results, filled by test_acceptance and printed in the summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
