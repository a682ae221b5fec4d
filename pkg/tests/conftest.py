from __future__ import annotations

import pytest

from hamfold.legendre import HamiltonianBundle
from hamfold.library import get
from hamfold.model import analyze_hessian


def make_bundle(name: str, n_p: int | None = None) -> HamiltonianBundle:
    s = get(name).system
    return HamiltonianBundle(s, analyze_hessian(s, n_p=n_p))


@pytest.fixture(scope="session")
def bundle():
    cache = {}

    def get_bundle(name, n_p=None):
        if (name, n_p) not in cache:
            cache[name, n_p] = make_bundle(name, n_p)
        return cache[name, n_p]

    return get_bundle
