import numpy as np
import pytest

from sddtmpc import setops


def brute_vertices(P, tol=1e-9):
    """2-D vertex enumeration by intersecting every pair of facet lines (Cramer's rule)."""
    A, b = P.normals, P.offsets
    i, j = np.triu_indices(len(b), 1)
    det = A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0]
    ok = np.abs(det) >= 1e-12
    i, j, det = i[ok], j[ok], det[ok]
    x = (b[i] * A[j, 1] - A[i, 1] * b[j]) / det
    y = (A[i, 0] * b[j] - b[i] * A[j, 0]) / det
    pts = np.column_stack([x, y])
    return pts[np.all(pts @ A.T <= b + tol, axis=1)]


def random_octagon(rng, scale=1.0, center=None):
    T = setops.polygon_template(8, rng.uniform(0, np.pi / 4))
    c = np.zeros(2) if center is None else center
    offs = scale * rng.uniform(0.3, 2.0, 8) + T @ c
    # tighten to the support so every facet is active
    P = setops.TemplatePolytope(T, offs)
    return setops.TemplatePolytope(T, np.array([np.max(brute_vertices(P) @ n) for n in T]))


def random_polygon(rng, n_facets=None):
    n = n_facets or int(rng.integers(3, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    # guarantee boundedness by adding a box
    N = np.vstack([np.column_stack([np.cos(ang), np.sin(ang)]), np.eye(2), -np.eye(2)])
    off = np.concatenate([rng.uniform(0.2, 2.0, n), rng.uniform(1.0, 3.0, 4)])
    return setops.TemplatePolytope(N, off)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one pass/fail line for a numbered criterion and echo it to the terminal."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
