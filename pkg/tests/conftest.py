import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from handkin.topology import (
    BASE_ORIENTATION,
    BASE_TRANSLATION,
    BONE_LENGTHS,
    FINGER_VECTORS,
    JOINT_ANGLES,
    N_PARAMS,
    WRIST_VECTOR,
    default_topology,
)

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def topo():
    return default_topology()


def random_lambda(rng, topo=None, margin=0.0, n=None):
    """Random valid parameter vectors with angles ``margin`` rad inside the limits."""
    topo = topo or default_topology()
    shape = () if n is None else (n,)
    lam = np.zeros(shape + (N_PARAMS,))
    lam[..., BASE_TRANSLATION] = rng.uniform(-50, 50, shape + (3,))
    lam[..., BASE_ORIENTATION] = rng.uniform(-1.2, 1.2, shape + (3,))
    lam[..., FINGER_VECTORS] = topo.reference_finger_vectors.ravel() * rng.uniform(0.8, 1.2, shape + (12,))
    lam[..., WRIST_VECTOR] = topo.reference_wrist_vector * rng.uniform(0.8, 1.2, shape + (3,))
    lam[..., BONE_LENGTHS] = topo.reference_bone_lengths * rng.uniform(0.8, 1.2, shape + (15,))
    low, up = topo.limits
    lam[..., JOINT_ANGLES] = rng.uniform(low + margin, up - margin, shape + (25,))
    return lam


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(number: int, ok: bool, detail: str) -> None:
        lines[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
