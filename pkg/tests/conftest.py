"""Shared fixtures and the acceptance-criterion summary."""

import numpy as np
import pytest

_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    num, text = marker.args
    entry = _CRITERIA.setdefault(num, {"text": text, "ok": True, "ran": False})
    if call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception):
        entry["ok"] = False
    if call.when == "call":
        entry["ran"] = True


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        entry = _CRITERIA[num]
        verdict = "PASS" if entry["ok"] and entry["ran"] else ("SKIP" if entry["ok"] else "FAIL")
        terminalreporter.write_line(f"criterion {num}: {verdict}  {entry['text']}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pd(rng, d, floor=0.1):
    X = rng.standard_normal((d, d))
    return X @ X.T + floor * np.eye(d)


def random_inclusion(rng, r_x, r_u, n, spread=0.1):
    """Vertices scattered around a random, possibly open-loop unstable, nominal pair."""
    from dclqr.model import DifferenceInclusion, VertexSystem

    A0 = rng.standard_normal((r_x, r_x))
    A0 *= rng.uniform(0.6, 1.2) / max(abs(np.linalg.eigvals(A0)))
    B0 = rng.standard_normal((r_x, r_u))
    verts = tuple(
        VertexSystem(A0 + spread * rng.standard_normal((r_x, r_x)),
                     B0 + spread * rng.standard_normal((r_x, r_u)))
        for _ in range(n)
    )
    return DifferenceInclusion(verts)


def small_spread_benchmark(seed, n=20, var=0.01):
    """Benchmark Jacobians on a tight Gaussian grid around the origin."""
    from dclqr.experiments import sample_grid
    from dclqr.model import BenchmarkPlant, vertices_from_grid

    xs, us = sample_grid(np.random.default_rng(seed), n, var * np.eye(3), 2)
    return vertices_from_grid(BenchmarkPlant(), zip(xs, us))


def closed_loop_radius_2x2(As, Bs, K):
    """Spectral radii of ``A_i + B_i k`` for many 2x2 vertices and gains at once.

    ``As``: (n, 2, 2), ``Bs``: (n, 2), ``K``: (m, 2). Returns (m, n).
    """
    M = As[None, :, :, :] + Bs[None, :, :, None] * K[:, None, None, :]
    tr = M[..., 0, 0] + M[..., 1, 1]
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    disc = np.sqrt((tr * tr / 4 - det).astype(complex))
    return np.maximum(np.abs(tr / 2 + disc), np.abs(tr / 2 - disc))
