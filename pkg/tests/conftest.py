import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_polymap(rng, n_in, n_out, order, scale=1.0):
    from taylormap.polyalg import PolyMap, basis_size

    return PolyMap(
        tuple(scale * rng.standard_normal((n_out, basis_size(n_in, k))) for k in range(order + 1)),
        n_in,
    )


def unit_ball(rng, count, n):
    v = rng.standard_normal((count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.random((count, 1)) ** (1.0 / n)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def accept():
    """``accept(n, ok, detail)`` records the criterion line, then asserts ``ok``."""

    def record(n: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
