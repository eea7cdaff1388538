"""P1 stiffness and mass matrices on triangles (vectorized over elements)."""
import numpy as np
from scipy.sparse import coo_matrix


class AssemblyError(ValueError):
    pass


def _geometry(vertices, triangles):
    p = np.asarray(vertices, dtype=float)[np.asarray(triangles)]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        k = int(np.argmax(det <= 0))
        raise AssemblyError(f"triangle {k} is inverted or degenerate (2*area = {det[k]:.3g})")
    return p, det / 2.0


def shape_gradients(vertices, triangles):
    """Gradients of the three barycentric basis functions per triangle, shape (T, 3, 2)."""
    p, area = _geometry(vertices, triangles)
    # grad(lambda_i) = rot90(p_k - p_j) / (2A) for (i, j, k) cyclic
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    g = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2 * area)[:, None, None]
    return g, area


def _scatter(triangles, local, n):
    t = np.asarray(triangles)
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def element_stiffness(vertices, triangles):
    g, area = shape_gradients(vertices, triangles)
    return np.einsum("tid,tjd->tij", g, g) * area[:, None, None]


def element_mass(vertices, triangles):
    _, area = _geometry(vertices, triangles)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return area[:, None, None] * ref[None]


def stiffness_matrix(vertices, triangles):
    return _scatter(triangles, element_stiffness(vertices, triangles), len(vertices))


def mass_matrix(vertices, triangles):
    return _scatter(triangles, element_mass(vertices, triangles), len(vertices))


def edge_mass_matrix(vertices, edges, n=None):
    """1D P1 mass matrix over boundary edges (for flux and Robin terms)."""
    v = np.asarray(vertices, dtype=float)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = len(v) if n is None else n
    L = np.hypot(*(v[e[:, 1]] - v[e[:, 0]]).T)
    local = L[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)[None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    return coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble(mesh):
    """Stiffness ``K``, mass ``M`` and boundary mass matrices keyed by edge label.

    Boundary matrices only include edges on the domain boundary; internal
    interface edges carry no boundary terms.
    """
    K = stiffness_matrix(mesh.vertices, mesh.triangles)
    M = mass_matrix(mesh.vertices, mesh.triangles)
    bedges = mesh.boundary_edges()
    tags = mesh.boundary_edge_tags()
    boundary = {}
    for label in sorted(set(tags)):
        sel = np.array([t == label for t in tags])
        boundary[label] = edge_mass_matrix(mesh.vertices, bedges[sel], mesh.n_vertices)
    return K, M, boundary
