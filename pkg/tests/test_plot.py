import xml.etree.ElementTree as ET

import numpy as np

from morphokit.fem import noisy_state
from morphokit.mapping import map_normal
from morphokit.plot import Canvas, colormap, plot_curves, plot_field, plot_mesh, plot_state
from morphokit.shapes import circle, kidney

from conftest import grid_mesh


def test_colormap_endpoints():
    np.testing.assert_array_equal(colormap([0.0, 1.0, -3, 7]), [[68, 1, 84], [253, 231, 37], [68, 1, 84], [253, 231, 37]])


def test_canvas_y_up():
    cv = Canvas([[0, 0], [1, 1]], width=100, margin=0.0)
    np.testing.assert_allclose(cv.xy([[0, 0], [1, 1]]), [[0, 100], [100, 0]])


def test_svgs_are_valid_and_deterministic(tmp_path):
    m = grid_mesh(5)
    s = noisy_state(m, [1.0], 0.2, seed=1)
    f = map_normal(circle(1, 32), circle(1.5, 32))
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        plot_curves([kidney(40), circle(2, 40)], d / "c.svg", title="a < b & c")
        plot_field(f, d / "f.svg", [circle(1, 32), circle(1.5, 32)])
        plot_mesh(m, d / "m.svg")
        plot_state(s, d / "s.svg")
    for name in ("c", "f", "m", "s"):
        a = (tmp_path / "0" / f"{name}.svg").read_bytes()
        assert a == (tmp_path / "1" / f"{name}.svg").read_bytes()
        root = ET.fromstring(a)
        assert root.tag.endswith("svg")
    root = ET.fromstring((tmp_path / "0" / "s.svg").read_bytes())
    polys = [e for e in root.iter() if e.tag.endswith("polygon")]
    assert len(polys) == len(m.triangles)
