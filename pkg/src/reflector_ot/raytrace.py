"""Monte-Carlo validation: push source samples through the computed map and
compare the binned hit density against the target intensity.

Point location exploits the structured ring mesh: the flat polar chart of a
sample determines its ring and sector up to a couple of neighbours, so each
query tests a handful of candidate triangles instead of searching a tree.
Inside the located (possibly curved) element the reference coordinates are
polished by Gauss-Newton on the isoparametric chart and the map is evaluated
from element-local FE gradients.
"""

from dataclasses import dataclass, field

import numpy as np

from . import reference, sphere
from .capmesh import ring_tri_start
from .errors import GridMismatch, PointLocationError


def _chart_coords(mesh, points):
    """Flat polar-chart coordinates of unit points, tolerant of any input.

    Points near the antipode of the cap centre (log map degenerate) land at
    chart radius ~pi, far outside every ring, so they simply fail location.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    c = np.broadcast_to(mesh.center, pts.shape)
    t = sphere.tangent_project(c, pts)
    nt = np.linalg.norm(t, axis=-1)
    ang = np.arccos(np.clip(np.sum(c * pts, axis=-1), -1.0, 1.0))
    safe = np.where(nt < 1e-14, 1.0, nt)
    v = (ang / safe)[..., None] * t
    e1, e2 = mesh.frame
    xy = np.stack([v @ e1, v @ e2], axis=1)
    # degenerate direction: keep the radius, pick an arbitrary azimuth
    deg = nt < 1e-14
    xy[deg, 0] = ang[deg]
    xy[deg, 1] = 0.0
    return xy


def _candidate_triangles(mesh, xy):
    """Candidate triangle indices per query from ring/sector arithmetic."""
    n = mesh.n_radial
    h = mesh.theta / n
    rho = np.linalg.norm(xy, axis=1)
    beta = np.mod(np.arctan2(xy[:, 1], xy[:, 0]), 2.0 * np.pi)
    cands = []
    j0 = np.floor(rho / h).astype(int) + 1
    for dj in (-1, 0, 1):
        j = np.clip(j0 + dj, 1, n)
        base = 6 * (j - 1) ** 2  # ring_tri_start vectorised
        block = 2 * j - 1
        sector = np.minimum((beta / (np.pi / 3.0)).astype(int), 5)
        alpha = beta / (np.pi / 3.0) - sector
        iu = np.floor(alpha * j).astype(int)
        idn = np.floor(alpha * np.maximum(j - 1, 1)).astype(int)
        for di in (-1, 0, 1):
            up = np.clip(iu + di, 0, j - 1)
            cands.append(base + sector * block + up)
            dn = np.clip(idn + di, 0, np.maximum(j - 2, 0))
            ok = j >= 2
            cands.append(np.where(ok, base + sector * block + j + np.minimum(dn, np.maximum(j - 2, 0)), -1))
    return np.stack(cands, axis=1)


def locate(mesh, points, tol=0.05):
    """Locate unit points in the structured mesh.

    Returns (tri, ref) where tri is -1 for unlocated points and ref holds the
    flat-chart barycentric (xi, eta) guess per point.  Points whose best
    candidate violates barycentric bounds by more than ``tol`` stay unlocated
    (near-rim slivers within ``tol`` are clamped to the closest triangle).
    """
    xy = _chart_coords(mesh, points)
    cand = _candidate_triangles(mesh, xy)
    flat = mesh.flat_coords[mesh.triangles]  # (ntri, 3, 2)
    npts, ncand = cand.shape
    safe = np.maximum(cand, 0)
    v0 = flat[safe, 0]
    d1 = flat[safe, 1] - v0
    d2 = flat[safe, 2] - v0
    rhs = xy[:, None, :] - v0
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    lam1 = (rhs[..., 0] * d2[..., 1] - rhs[..., 1] * d2[..., 0]) / det
    lam2 = (d1[..., 0] * rhs[..., 1] - d1[..., 1] * rhs[..., 0]) / det
    quality = np.minimum.reduce([lam1, lam2, 1.0 - lam1 - lam2])
    quality = np.where(cand >= 0, quality, -np.inf)
    pick = np.argmax(quality, axis=1)
    rows = np.arange(npts)
    best_q = quality[rows, pick]
    tri = np.where(best_q > -tol, cand[rows, pick], -1)
    ref = np.stack(
        [np.clip(lam1[rows, pick], 0.0, 1.0), np.clip(lam2[rows, pick], 0.0, 1.0)], axis=1
    )
    return tri, ref


def _refine_ref_coords(mesh, points, tri, ref, iters=4):
    """Gauss-Newton polish of reference coordinates on the curved chart."""
    vfn, gfn, _ = reference.basis(mesh.order)
    nodes = mesh.vertices[mesh.geometry_nodes()[tri]]  # (n, nloc, 3)
    pts = np.atleast_2d(np.asarray(points, float))
    ref = ref.copy()
    for _ in range(iters if mesh.order > 1 else 1):
        val = vfn(ref)
        grad = gfn(ref)
        x = np.einsum("nl,nlk->nk", val, nodes)
        J = np.einsum("nlj,nlk->nkj", grad, nodes)  # (n, 3, 2)
        res = pts - x
        JtJ = np.einsum("nki,nkj->nij", J, J)
        Jtr = np.einsum("nki,nk->ni", J, res)
        det = JtJ[:, 0, 0] * JtJ[:, 1, 1] - JtJ[:, 0, 1] * JtJ[:, 1, 0]
        dx = (JtJ[:, 1, 1] * Jtr[:, 0] - JtJ[:, 0, 1] * Jtr[:, 1]) / det
        dy = (JtJ[:, 0, 0] * Jtr[:, 1] - JtJ[:, 1, 0] * Jtr[:, 0]) / det
        ref[:, 0] += dx
        ref[:, 1] += dy
        if mesh.order == 1:
            break
    return ref


def gradient_at_points(space, u, points, on_missing="raise"):
    """Element-local tangential gradient of a field at arbitrary cap points.

    Returns (grad (n, 3), located mask).  Unlocated points raise by default
    or are masked out with on_missing="skip".
    """
    mesh = space.mesh
    pts = np.atleast_2d(np.asarray(points, float))
    tri, ref = locate(mesh, pts)
    ok = tri >= 0
    if not np.all(ok) and on_missing == "raise":
        raise PointLocationError(f"{int((~ok).sum())} points fell outside the mesh")
    t = np.maximum(tri, 0)
    ref = _refine_ref_coords(mesh, pts, t, ref)
    _, gfn, _ = reference.basis(mesh.order)
    geom_nodes = mesh.vertices[mesh.geometry_nodes()[t]]
    J = np.einsum("nlj,nlk->nkj", gfn(ref), geom_nodes)
    G = np.einsum("nki,nkj->nij", J, J)
    detG = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    inv = np.empty_like(G)
    inv[:, 0, 0] = G[:, 1, 1]
    inv[:, 1, 1] = G[:, 0, 0]
    inv[:, 0, 1] = -G[:, 0, 1]
    inv[:, 1, 0] = -G[:, 1, 0]
    inv /= detG[:, None, None]
    _, fgfn, _ = reference.basis(space.degree)
    coeffs = np.asarray(u, float)[space.elements[t]]
    gref = np.einsum("nbj,nb->nj", fgfn(ref), coeffs)
    grad = np.einsum("nkj,nji,ni->nk", J, inv, gref)
    return sphere.tangent_project(pts, grad), ok


def trace(space, u, cost_sign, samples):
    """Push samples through the computed optical map.

    Returns (hits (m, 3), located mask); unlocated samples are counted and
    skipped.
    """
    samples = np.atleast_2d(np.asarray(samples, float))
    grad, ok = gradient_at_points(space, u, samples, on_missing="skip")
    hits = sphere.reflector_map(samples[ok], grad[ok], cost_sign)
    return hits, ok


def to_plane(hits):
    """Central projection of sphere hits to the plane z = 0.5.

    Returns (XY, visible mask); hits with x3 <= 0.05 count as misses.
    """
    hits = np.atleast_2d(np.asarray(hits, float))
    vis = hits[:, 2] > sphere.PLANE_VISIBILITY_FLOOR
    return sphere.direction_to_plane(hits[vis]), vis


@dataclass(frozen=True)
class SphereGrid:
    """Polar-azimuth cells about an axis with exact spherical cell areas."""

    axis: np.ndarray
    polar_max: float
    n_polar: int
    n_azimuth: int

    def cell_areas(self):
        tg = np.linspace(0.0, self.polar_max, self.n_polar + 1)
        dphi = 2.0 * np.pi / self.n_azimuth
        return np.repeat(
            ((np.cos(tg[:-1]) - np.cos(tg[1:])) * dphi)[:, None], self.n_azimuth, axis=1
        )

    def shape(self):
        return (self.n_polar, self.n_azimuth)

    def bin_indices(self, hits):
        axis = sphere.unit(np.asarray(self.axis, float))
        e1, e2 = sphere.tangent_basis(axis)
        polar = sphere.geodesic_distance(hits, axis)
        az = np.mod(np.arctan2(hits @ e2, hits @ e1), 2.0 * np.pi)
        i = np.floor(polar / self.polar_max * self.n_polar).astype(int)
        j = np.minimum(np.floor(az / (2.0 * np.pi) * self.n_azimuth).astype(int), self.n_azimuth - 1)
        ok = (polar < self.polar_max) & (i < self.n_polar)
        return i, j, ok

    def centers(self):
        axis = sphere.unit(np.asarray(self.axis, float))
        e1, e2 = sphere.tangent_basis(axis)
        tg = np.linspace(0.0, self.polar_max, self.n_polar + 1)
        tc = 0.5 * (tg[1:] + tg[:-1])
        ac = (np.arange(self.n_azimuth) + 0.5) * 2.0 * np.pi / self.n_azimuth
        tt, aa = np.meshgrid(tc, ac, indexing="ij")
        return (
            np.cos(tt)[..., None] * axis
            + np.sin(tt)[..., None] * (np.cos(aa)[..., None] * e1 + np.sin(aa)[..., None] * e2)
        )


@dataclass(frozen=True)
class PlaneGrid:
    """Uniform rectangular cells on the plane z = 0.5."""

    extent: tuple  # (xmin, xmax, ymin, ymax)
    nx: int
    ny: int

    def cell_areas(self):
        xmin, xmax, ymin, ymax = self.extent
        return np.full((self.ny, self.nx), (xmax - xmin) / self.nx * (ymax - ymin) / self.ny)

    def shape(self):
        return (self.ny, self.nx)

    def bin_indices(self, XY):
        xmin, xmax, ymin, ymax = self.extent
        i = np.floor((ymax - XY[:, 1]) / (ymax - ymin) * self.ny).astype(int)
        j = np.floor((XY[:, 0] - xmin) / (xmax - xmin) * self.nx).astype(int)
        ok = (i >= 0) & (i < self.ny) & (j >= 0) & (j < self.nx)
        return i, j, ok

    def centers(self):
        xmin, xmax, ymin, ymax = self.extent
        xc = xmin + (np.arange(self.nx) + 0.5) * (xmax - xmin) / self.nx
        yc = ymax - (np.arange(self.ny) + 0.5) * (ymax - ymin) / self.ny
        XX, YY = np.meshgrid(xc, yc)
        return np.stack([XX, YY], axis=-1)


@dataclass
class TraceResult:
    image: np.ndarray
    grid: object
    total_samples: int
    in_grid: int
    miss_fraction: float
    errors: dict = field(default_factory=dict)

    @property
    def in_grid_mass(self):
        return float(np.sum(self.image * self.grid.cell_areas()))


def bin_hits(points, grid, total_samples, smoothing=0.0):
    """Histogram density estimate: count / (total_samples * cell area).

    ``points`` are sphere hits (SphereGrid) or plane XY (PlaneGrid); samples
    lost upstream are part of total_samples, so in-grid mass plus the
    reported miss fraction is exactly 1 by counting.  ``smoothing`` > 0
    applies a Gaussian kernel of that many cells.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    i, j, ok = grid.bin_indices(pts)
    counts = np.zeros(grid.shape())
    np.add.at(counts, (i[ok], j[ok]), 1.0)
    if smoothing > 0.0:
        from scipy.ndimage import gaussian_filter

        total = counts.sum()
        counts = gaussian_filter(counts, smoothing, mode="constant")
        if counts.sum() > 0:
            counts *= total / counts.sum()
    image = counts / (total_samples * grid.cell_areas())
    in_grid = int(ok.sum())
    return TraceResult(
        image=image,
        grid=grid,
        total_samples=total_samples,
        in_grid=in_grid,
        miss_fraction=1.0 - in_grid / total_samples,
    )


def reference_image(intensity, grid):
    """Target density sampled at the cell centres of a grid."""
    centers = grid.centers()
    return intensity.eval(centers.reshape(-1, centers.shape[-1])).reshape(grid.shape())


def compare(image, ref, grid, normalize=True):
    """Area-weighted L1/L2/Linf distances and the error map.

    With ``normalize`` both densities are scaled to unit mass on the grid
    before comparison.
    """
    image = np.asarray(image, float)
    ref = np.asarray(ref, float)
    if image.shape != ref.shape or image.shape != grid.shape():
        raise GridMismatch(f"image {image.shape} vs reference {ref.shape} on {grid.shape()}")
    areas = grid.cell_areas()
    a, b = image, ref
    if normalize:
        ma, mb = float(np.sum(a * areas)), float(np.sum(b * areas))
        if ma > 0:
            a = a / ma
        if mb > 0:
            b = b / mb
    diff = a - b
    return {
        "L1": float(np.sum(np.abs(diff) * areas)),
        "L2": float(np.sqrt(np.sum(diff**2 * areas))),
        "Linf": float(np.max(np.abs(diff))),
        "error_map": np.abs(diff),
    }
