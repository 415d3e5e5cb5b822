"""Shared fixtures: session-scoped cache directory and expensive profiles."""

import os

import pytest

from nlheat.constants import ModelInput


@pytest.fixture(scope="session")
def shared_cache(tmp_path_factory):
    """Point the profile cache at a session temp dir."""
    d = tmp_path_factory.mktemp("nlheat_cache")
    old = os.environ.get("NLHEAT_CACHE")
    os.environ["NLHEAT_CACHE"] = str(d)
    yield str(d)
    if old is None:
        os.environ.pop("NLHEAT_CACHE", None)
    else:
        os.environ["NLHEAT_CACHE"] = old


@pytest.fixture(scope="session")
def model135():
    return ModelInput(13, 5, 2, 4)


@pytest.fixture(scope="session")
def ground135(shared_cache, model135):
    from nlheat.groundstate import compute_ground_state
    return compute_ground_state(model135)


@pytest.fixture(scope="session")
def kernels135(ground135):
    """Kernel pairs for sectors n = 0, 1, 2 (session-wide reuse)."""
    from nlheat.spectral import kernel_pair
    return {n: kernel_pair(ground135, n) for n in (0, 1, 2)}


@pytest.fixture(scope="session")
def ladder135(ground135):
    from nlheat.spectral import build_ladder
    return {n: build_ladder(ground135, n, depth=3) for n in (0, 1, 2)}


@pytest.fixture(scope="session")
def radial_ladder135(ground135):
    """Full-depth radial ladder on the closed kernel basis, with its pair."""
    from nlheat.spectral import build_ladder, kernel_pair
    pair = kernel_pair(ground135, 0, basis="closed")
    return pair, build_ladder(ground135, 0, pair=pair)
