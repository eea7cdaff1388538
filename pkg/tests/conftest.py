from pathlib import Path

import numpy as np
import pytest

from morphokit.geometry import Curve
from morphokit.mesh import TriMesh, triangulate

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"


def unit_square(label="boundary"):
    return Curve(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), True, label)


def grid_mesh(n=8, length=1.0, label="boundary", sides=False):
    """Structured right-triangle mesh of the square [0, length]^2.

    With ``sides`` the boundary edges are tagged bottom/right/top/left.
    """
    x = np.linspace(0.0, length, n + 1)
    X, Y = np.meshgrid(x, x)
    v = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tris = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    ring = np.concatenate([idx[0, :-1], idx[:-1, -1], idx[-1, :0:-1], idx[:0:-1, 0]])
    edges = np.column_stack([ring, np.roll(ring, -1)])
    curve = Curve(v[ring], True, label)
    if not sides:
        return TriMesh(v, tris, edges, (label,) * len(edges), ("domain",) * len(tris), {label: curve})
    tags = tuple(np.repeat(["bottom", "right", "top", "left"], n).tolist())
    curves = {t: Curve(v[np.append(ring, ring[0])][k * n:(k + 1) * n + 1], False, t)
              for k, t in enumerate(["bottom", "right", "top", "left"])}
    return TriMesh(v, tris, edges, tags, ("domain",) * len(tris), curves)


@pytest.fixture(scope="session")
def square_mesh():
    return triangulate(unit_square(), target_h=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
