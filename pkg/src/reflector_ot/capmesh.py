"""Structured curved triangulations of a spherical cap.

The mesh is a polar "ring" triangulation of a flat geodesic disk, pushed onto
the sphere with the exponential map at the cap centre: ring j carries 6j
vertices, the strip between rings j-1 and j carries 6(2j-1) triangles, giving
exactly 6 N^2 triangles and 3 N^2 + 3 N + 1 corner vertices for N cells along
the geodesic radius.  The layout is deterministic, so N matches the mesh-size
convention h = theta / N and downstream point location can use ring/sector
index arithmetic instead of a search tree.
"""

from dataclasses import dataclass, field

import numpy as np

from . import reference, sphere
from .errors import InvalidParameter, NotBoundary


def ring_start(j):
    """Global index of the first vertex of ring j (ring 0 is the centre)."""
    return 0 if j == 0 else 1 + 3 * j * (j - 1)


def ring_tri_start(j):
    """Global index of the first triangle of the strip ending at ring j."""
    return 6 * (j - 1) ** 2


@dataclass(frozen=True)
class CapMesh:
    """Curved triangulation of the cap {x : geodesic_dist(x, center) <= theta}.

    vertices carries every geometric node (corner vertices first, midpoint
    nodes appended for order 2); triangles holds corner indices, tri_midnodes
    the matching midpoint indices (order 2 only).  flat_coords are the 2D
    chart positions of the corner vertices used by structured point location.
    """

    theta: float
    n_radial: int
    order: int
    center: np.ndarray
    vertices: np.ndarray  # (nnodes, 3)
    n_corners: int
    triangles: np.ndarray  # (ntri, 3) corner indices, outward CCW
    tri_midnodes: np.ndarray | None  # (ntri, 3) midpoint indices or None
    boundary_edges: np.ndarray  # (nbe, 2) corner indices, CCW along the rim
    boundary_edge_tri: np.ndarray  # (nbe,) parent triangle index
    boundary_edge_mid: np.ndarray | None  # (nbe,) midpoint index or None
    flat_coords: np.ndarray  # (n_corners, 2)
    frame: tuple = field(repr=False, default=None)  # (E1, E2) chart frame

    @property
    def h(self):
        """Mesh size along the geodesic radius, theta / N."""
        return self.theta / self.n_radial

    @property
    def n_triangles(self):
        return len(self.triangles)

    def geometry_nodes(self):
        """(ntri, nloc) node indices of the geometric chart per element."""
        if self.order == 1:
            return self.triangles
        return np.concatenate([self.triangles, self.tri_midnodes], axis=1)

    def boundary_nodes(self):
        """Sorted unique indices of every geometric node on the rim."""
        nodes = [self.boundary_edges.ravel()]
        if self.boundary_edge_mid is not None:
            nodes.append(self.boundary_edge_mid)
        return np.unique(np.concatenate(nodes))

    def euler_characteristic(self):
        """V - E + F over the corner triangulation; 1 for a disk."""
        tris = self.triangles
        edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        return self.n_corners - len(edges) + len(tris)


def _polar_disk(theta, n):
    """Flat chart of the structured disk: vertices, triangles, rim edges."""
    h = theta / n
    coords = [np.zeros((1, 2))]
    for j in range(1, n + 1):
        ang = np.pi * np.arange(6 * j) / (3.0 * j)
        coords.append(j * h * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    flat = np.concatenate(coords, axis=0)

    tris = np.empty((6 * n * n, 3), dtype=np.int64)
    for j in range(1, n + 1):
        outer0, inner0 = ring_start(j), ring_start(j - 1)
        n_out, n_in = 6 * j, max(6 * (j - 1), 1)
        base = ring_tri_start(j)
        block = 2 * j - 1
        for s in range(6):
            out = [outer0 + (s * j + i) % n_out for i in range(j + 1)]
            if j == 1:
                inner = [0]
            else:
                inner = [inner0 + (s * (j - 1) + i) % n_in for i in range(j)]
            row = base + s * block
            for i in range(j):  # outward-pointing triangles
                tris[row + i] = (out[i], out[i + 1], inner[i])
            for i in range(j - 1):  # inward-pointing triangles
                tris[row + j + i] = (inner[i], out[i + 1], inner[i + 1])

    rim = []
    base = ring_tri_start(n)
    block = 2 * n - 1
    for s in range(6):
        for i in range(n):
            t = base + s * block + i
            rim.append((tris[t, 0], tris[t, 1], t))
    rim = np.array(rim, dtype=np.int64)
    return flat, tris, rim[:, :2], rim[:, 2]


def _push_to_rim(points, center, theta):
    """Move points to polar angle exactly theta, keeping their azimuth."""
    t = sphere.unit(sphere.tangent_project(center, points))
    return np.cos(theta) * center + np.sin(theta) * t


def build_cap_mesh(theta, n, order=2, center=(0.0, 0.0, -1.0)):
    """Build the structured cap mesh.

    theta  : geodesic cap radius in (0, pi/2)
    n      : cells along the geodesic radius (>= 2)
    order  : geometric order, 1 (flat chords) or 2 (curved edges)
    center : cap centre direction (defaults to -e_z, the source cap)
    """
    if not 0.0 < theta < np.pi / 2:
        raise InvalidParameter(f"cap radius theta must lie in (0, pi/2), got {theta}")
    if n < 2:
        raise InvalidParameter(f"need at least 2 cells along the radius, got {n}")
    if order not in (1, 2):
        raise InvalidParameter(f"geometric order must be 1 or 2, got {order}")
    center = sphere.unit(np.asarray(center, float))

    flat, tris, rim_edges, rim_tris = _polar_disk(theta, n)
    e1, e2 = sphere.tangent_basis(center)
    tangents = flat[:, 0:1] * e1 + flat[:, 1:2] * e2
    verts = sphere.exp_map(np.broadcast_to(center, tangents.shape), tangents)
    n_corners = len(verts)

    tri_mid = None
    rim_mid = None
    if order == 2:
        edge_ids = {}
        mids = []
        tri_mid = np.empty_like(tris)
        rim_keys = {tuple(sorted(e)): k for k, e in enumerate(map(tuple, rim_edges))}
        rim_mid = np.empty(len(rim_edges), dtype=np.int64)
        for t, (a, b, c) in enumerate(tris):
            for loc, (i, j) in enumerate(((a, b), (b, c), (c, a))):
                key = (min(i, j), max(i, j))
                if key not in edge_ids:
                    mid = sphere.unit(verts[i] + verts[j])
                    if key in rim_keys:
                        mid = _push_to_rim(mid, center, theta)
                        rim_mid[rim_keys[key]] = n_corners + len(mids)
                    edge_ids[key] = n_corners + len(mids)
                    mids.append(mid)
                tri_mid[t, loc] = edge_ids[key]
        verts = np.concatenate([verts, np.array(mids)], axis=0)

    mesh = CapMesh(
        theta=float(theta),
        n_radial=int(n),
        order=order,
        center=center,
        vertices=verts,
        n_corners=n_corners,
        triangles=tris,
        tri_midnodes=tri_mid,
        boundary_edges=rim_edges,
        boundary_edge_tri=rim_tris,
        boundary_edge_mid=rim_mid,
        flat_coords=flat,
        frame=(e1, e2),
    )
    _validate(mesh)
    return mesh


def _validate(mesh):
    v = mesh.vertices
    if np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0)) > 1e-12:
        raise InvalidParameter("mesh node left the unit sphere")
    tri = v[mesh.triangles]
    normal_cue = np.einsum(
        "ij,ij->i", np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), tri[:, 0]
    )
    if np.any(normal_cue <= 0.0):
        raise InvalidParameter("inconsistently oriented triangle in cap mesh")
    rim = sphere.geodesic_distance(v[mesh.boundary_nodes()], mesh.center)
    if np.max(np.abs(rim - mesh.theta)) > 1e-10:
        raise InvalidParameter("boundary node off the cap rim")


def boundary_conormal(mesh, node):
    """Unit outward co-normal of the cap at a boundary node.

    Tangent to the sphere, perpendicular to the rim, pointing out of the cap:
    the direction of increasing geodesic distance from the cap centre.
    """
    if node not in mesh.boundary_nodes():
        raise NotBoundary(f"node {node} is not on the cap boundary")
    return conormal_at(mesh.center, mesh.vertices[node])


def conormal_at(center, points):
    """Outward co-normal field of a cap about ``center`` at rim points."""
    return -sphere.unit(sphere.tangent_project(points, np.broadcast_to(center, np.shape(points))))


def cap_area(theta):
    """Area of a geodesic cap of radius theta on the unit sphere."""
    return 2.0 * np.pi * (1.0 - np.cos(theta))


def mesh_statistics(mesh, quad_degree=6):
    """Mesh size and curved-element area summary.

    Areas are evaluated with the isoparametric chart; the total converges to
    the analytic cap area 2 pi (1 - cos theta) as N grows.
    """
    vfn, gfn, _ = reference.basis(mesh.order)
    pts, w = reference.triangle_quadrature(quad_degree)
    nodes = mesh.vertices[mesh.geometry_nodes()]
    J = reference.chart_jacobian(nodes, gfn(pts))
    _, _, warea = reference.metric_and_weights(J, w)
    areas = warea.sum(axis=1)
    return {
        "h": mesh.h,
        "min_area": float(areas.min()),
        "max_area": float(areas.max()),
        "total_area": float(areas.sum()),
    }
