"""Source and target intensity models.

An intensity is an evaluable nonnegative density, either on the unit sphere
or on the far-field plane z = 0.5.  Sphere intensities know a bounding cap
(axis + half-angle) that contains their support; that cap drives mass
quadrature, rejection sampling and the target-side quadrature grids of the
dual diagnostics.
"""

from dataclasses import dataclass, field

import numpy as np

from . import sphere
from .capmesh import cap_area
from .errors import EmptySupport, InvalidParameter, RejectionStall, ZeroMass

EZ = np.array([0.0, 0.0, 1.0])
# half-angle slack so quadrature points of a curved mesh never fall off the
# support of their own cap by roundoff
SUPPORT_TOL = 1e-6


def cap_quadrature(axis, halfangle, n_polar=400, n_azimuth=400):
    """Midpoint product rule on a geodesic cap with exact cell areas.

    Returns (points (n, 3), weights (n,)).
    """
    axis = sphere.unit(np.asarray(axis, float))
    tg = np.linspace(0.0, halfangle, n_polar + 1)
    ag = np.linspace(0.0, 2.0 * np.pi, n_azimuth + 1)
    tcen = 0.5 * (tg[1:] + tg[:-1])
    acen = 0.5 * (ag[1:] + ag[:-1])
    area = (np.cos(tg[:-1]) - np.cos(tg[1:]))[:, None] * np.diff(ag)[None, :]
    e1, e2 = sphere.tangent_basis(axis)
    tt, aa = np.meshgrid(tcen, acen, indexing="ij")
    pts = (
        np.cos(tt)[..., None] * axis
        + np.sin(tt)[..., None] * (np.cos(aa)[..., None] * e1 + np.sin(aa)[..., None] * e2)
    )
    return pts.reshape(-1, 3), area.ravel()


class Intensity:
    """Base class: nonnegative density with mass, sampling and scaling."""

    #: multiplicative prefactor applied by ``scaled``
    scale = 1.0

    def eval(self, points):
        raise NotImplementedError

    def support_cap(self):
        """(axis, halfangle) of a cap containing the support (sphere only)."""
        raise NotImplementedError

    def total_mass(self, n_polar=400, n_azimuth=400):
        axis, half = self.support_cap()
        pts, w = cap_quadrature(axis, half, n_polar, n_azimuth)
        m = float(np.sum(self.eval(pts) * w))
        if m < 1e-14:
            raise ZeroMass("intensity has (numerically) zero mass")
        return m

    def scaled(self, factor):
        import copy

        out = copy.copy(self)
        out.scale = self.scale * factor
        return out

    def normalized(self, mass=1.0):
        """Rescale so the total mass equals ``mass``; idempotent."""
        return self.scaled(mass / self.total_mass())

    def sample(self, count, rng, oversample=4):
        """Rejection-sample directions with density proportional to eval."""
        axis, half = self.support_cap()
        pts, w = cap_quadrature(axis, half, 200, 200)
        bound = float(self.eval(pts).max()) * 1.05
        if bound <= 0.0:
            raise ZeroMass("cannot sample a zero intensity")
        out = np.empty((count, 3))
        got = 0
        drawn = 0
        while got < count:
            n = max(oversample * (count - got), 1024)
            cand = _uniform_cap_samples(axis, half, n, rng)
            accept = rng.random(n) * bound < self.eval(cand)
            drawn += n
            take = min(int(accept.sum()), count - got)
            out[got : got + take] = cand[accept][:take]
            got += take
            if drawn > 1024 and got / drawn < 1e-4:
                raise RejectionStall(
                    f"acceptance rate {got / drawn:.2e} below 1e-4; bad bounding cap?"
                )
        return out


def _uniform_cap_samples(axis, halfangle, count, rng):
    """Exact uniform samples on a cap: uniform in cos(polar) and azimuth."""
    c = rng.uniform(np.cos(halfangle), 1.0, count)
    a = rng.uniform(0.0, 2.0 * np.pi, count)
    st = np.sqrt(1.0 - c * c)
    e1, e2 = sphere.tangent_basis(axis)
    return (
        c[:, None] * axis + st[:, None] * (np.cos(a)[:, None] * e1 + np.sin(a)[:, None] * e2)
    )


@dataclass
class UniformCap(Intensity):
    """Constant ``height`` on the cap about ``axis``, zero outside."""

    axis: np.ndarray
    halfangle: float
    height: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        self.axis = sphere.unit(np.asarray(self.axis, float))
        if not 0.0 < self.halfangle < np.pi:
            raise InvalidParameter("cap halfangle out of range")

    def eval(self, points):
        inside = np.asarray(points, float) @ self.axis >= np.cos(self.halfangle + SUPPORT_TOL)
        return self.scale * self.height * inside.astype(float)

    def support_cap(self):
        return self.axis, self.halfangle

    def total_mass(self, n_polar=None, n_azimuth=None):
        return self.scale * self.height * cap_area(self.halfangle)

    def sample(self, count, rng, oversample=None):
        return _uniform_cap_samples(self.axis, self.halfangle, count, rng)


# the off-axis indicator target: unit density on the cap about q
CapIndicator = UniformCap


def off_axis_cap_target():
    """Indicator of the cap {y . q >= cos(pi/4)}, q tilted pi/8 off the pole."""
    q = np.array([0.0, -np.sin(np.pi / 8.0), np.cos(np.pi / 8.0)])
    return CapIndicator(q, np.pi / 4.0)


@dataclass
class SmoothBump(Intensity):
    """base + (peak - base) exp(-d(y, axis)^2 / width^2), restricted to a cap."""

    axis: np.ndarray
    width: float
    base: float = 1.0
    peak: float = 12.0
    support_axis: np.ndarray = field(default_factory=lambda: EZ.copy())
    support_halfangle: float = np.pi / 4.0
    scale: float = 1.0

    def __post_init__(self):
        self.axis = sphere.unit(np.asarray(self.axis, float))
        self.support_axis = sphere.unit(np.asarray(self.support_axis, float))

    def eval(self, points):
        pts = np.asarray(points, float)
        d = sphere.geodesic_distance(pts, self.axis)
        val = self.base + (self.peak - self.base) * np.exp(-((d / self.width) ** 2))
        inside = pts @ self.support_axis >= np.cos(self.support_halfangle + SUPPORT_TOL)
        return self.scale * np.where(inside, val, 0.0)

    def support_cap(self):
        return self.support_axis, self.support_halfangle


@dataclass
class GaussianFeatures(Intensity):
    """base plus a sum of signed geodesic Gaussians, restricted to a cap.

    ``features`` is a list of (axis, width, amplitude); negative amplitudes
    carve dips.  Used for smooth high-contrast synthetic targets.
    """

    features: list
    base: float = 1.0
    support_axis: np.ndarray = field(default_factory=lambda: EZ.copy())
    support_halfangle: float = np.pi / 4.0
    scale: float = 1.0

    def __post_init__(self):
        self.features = [
            (sphere.unit(np.asarray(ax, float)), float(w), float(a))
            for ax, w, a in self.features
        ]
        self.support_axis = sphere.unit(np.asarray(self.support_axis, float))

    def eval(self, points):
        pts = np.asarray(points, float)
        val = np.full(pts.shape[:-1], self.base)
        for ax, w, a in self.features:
            d = sphere.geodesic_distance(pts, ax)
            val = val + a * np.exp(-((d / w) ** 2))
        inside = pts @ self.support_axis >= np.cos(self.support_halfangle + SUPPORT_TOL)
        return self.scale * np.where(inside, np.maximum(val, 0.0), 0.0)

    def support_cap(self):
        return self.support_axis, self.support_halfangle


def _polar_axis(tilt, azimuth):
    return np.array(
        [np.sin(tilt) * np.cos(azimuth), np.sin(tilt) * np.sin(azimuth), np.cos(tilt)]
    )


def high_contrast_target(contrast=12.0, bump_width=0.16, dip_width=0.14, amplitude=4.0):
    """Smooth multi-feature target on the polar cap with a prescribed contrast.

    Three bumps spread over the cap plus one dip whose depth is calibrated on
    a fine grid so max/min over the support equals ``contrast``.
    """
    bumps = [(0.30, 0.5), (0.35, 2.6), (0.25, 4.4)]
    feats = [(_polar_axis(t, a), bump_width, amplitude) for t, a in bumps]
    dip_axis = _polar_axis(0.15, 1.6)
    probe = GaussianFeatures(feats, support_halfangle=np.pi / 4.0)
    pts, _ = cap_quadrature(EZ, np.pi / 4.0, 500, 500)
    gmax = float(probe.eval(pts).max())
    tails = float(probe.eval(dip_axis[None, :])[0])
    depth = tails - gmax / contrast
    # one correction pass against the realised grid minimum
    for _ in range(2):
        cand = GaussianFeatures(
            feats + [(dip_axis, dip_width, -depth)], support_halfangle=np.pi / 4.0
        )
        vals = cand.eval(pts)
        gmin = float(vals[vals > 0.0].min())
        depth += gmin - gmax / contrast
    return GaussianFeatures(feats + [(dip_axis, dip_width, -depth)], support_halfangle=np.pi / 4.0)


@dataclass
class PlaneRaster(Intensity):
    """Bilinearly interpolated nonnegative grid density on the plane z = 0.5.

    ``values[i, j]`` covers the cell at row i, column j; row 0 sits at the TOP
    of the physical extent (image convention).  ``extent`` is
    (xmin, xmax, ymin, ymax).
    """

    values: np.ndarray
    extent: tuple
    scale: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 2 or np.any(self.values < 0.0):
            raise InvalidParameter("raster must be a nonnegative 2d array")
        if not np.any(self.values > 0.0):
            raise EmptySupport("raster has no positive cell")
        xmin, xmax, ymin, ymax = self.extent
        if not (xmax > xmin and ymax > ymin):
            raise InvalidParameter("degenerate raster extent")

    def eval(self, XY):
        """Density at plane points (..., 2); zero outside the extent."""
        XY = np.asarray(XY, float)
        xmin, xmax, ymin, ymax = self.extent
        ny, nx = self.values.shape
        # fractional cell-centre coordinates
        fx = (XY[..., 0] - xmin) / (xmax - xmin) * nx - 0.5
        fy = (ymax - XY[..., 1]) / (ymax - ymin) * ny - 0.5
        inside = (
            (XY[..., 0] >= xmin) & (XY[..., 0] <= xmax)
            & (XY[..., 1] >= ymin) & (XY[..., 1] <= ymax)
        )
        fx = np.clip(fx, 0.0, nx - 1.0)
        fy = np.clip(fy, 0.0, ny - 1.0)
        i0 = np.clip(np.floor(fy).astype(int), 0, ny - 2) if ny > 1 else np.zeros_like(fy, int)
        j0 = np.clip(np.floor(fx).astype(int), 0, nx - 2) if nx > 1 else np.zeros_like(fx, int)
        di = np.clip(fy - i0, 0.0, 1.0)
        dj = np.clip(fx - j0, 0.0, 1.0)
        v = self.values
        out = (
            v[i0, j0] * (1 - di) * (1 - dj)
            + v[i0 + 1, j0] * di * (1 - dj)
            + v[i0, j0 + 1] * (1 - di) * dj
            + v[i0 + 1, j0 + 1] * di * dj
        )
        return self.scale * np.where(inside, out, 0.0)

    def cell_area(self):
        xmin, xmax, ymin, ymax = self.extent
        ny, nx = self.values.shape
        return (xmax - xmin) / nx * (ymax - ymin) / ny

    def total_mass(self, n_polar=None, n_azimuth=None):
        return self.scale * float(self.values.sum()) * self.cell_area()

    def support_cap(self):
        raise InvalidParameter("PlaneRaster lives on the plane; lift it first")


@dataclass
class LiftedPlane(Intensity):
    """Central-projection lift of a plane density onto the sphere.

    ghat(x) = (X^2 + Y^2 + 0.25)^{3/2} / 0.5 * g(X, Y) at (X, Y) = 0.5 x_{1,2}/x_3,
    zero for x_3 <= 0.05; lifted mass equals the plane mass.
    """

    plane: PlaneRaster
    scale: float = 1.0

    def eval(self, points):
        pts = np.asarray(points, float)
        vis = pts[..., 2] > sphere.PLANE_VISIBILITY_FLOOR
        safe = np.where(vis, pts[..., 2], 1.0)
        XY = sphere.PLANE_HEIGHT * pts[..., :2] / safe[..., None]
        val = sphere.lift_area_factor(XY) * self.plane.eval(XY)
        return self.scale * np.where(vis, val, 0.0)

    def support_cap(self):
        xmin, xmax, ymin, ymax = self.plane.extent
        corners = np.array(
            [[xmin, ymin], [xmin, ymax], [xmax, ymin], [xmax, ymax]], float
        )
        rmax = float(np.max(np.linalg.norm(corners, axis=1)))
        half = np.arctan(rmax / sphere.PLANE_HEIGHT)
        return EZ, min(half + 0.02, np.pi / 2 - 1e-3)


def stereographic_lift(plane_intensity):
    """Lift a plane density to the sphere with the central-projection factor."""
    return LiftedPlane(plane_intensity)


def raster_from_image(path, extent, threshold=0.0, floor="auto"):
    """PlaneRaster from a grayscale PGM image.

    Pixel values are scaled to [0, 1]; values at or below ``threshold`` are
    replaced by ``floor`` (default 1e-3 of the maximum, keeping g(T) bounded
    away from zero inside the support square).
    """
    from .io import read_pgm

    img = read_pgm(path)
    vals = img.astype(float) / max(img.max(), 1)
    if floor == "auto":
        floor = 1e-3 * float(vals.max())
    vals = np.where(vals > threshold, vals, floor)
    if not np.any(vals > 0.0):
        raise EmptySupport("image is empty after thresholding")
    return PlaneRaster(vals, tuple(extent))


def letter_a_raster(size=96, thickness=0.10):
    """Synthetic letter-A bitmap (1 inside the strokes, 0 outside).

    Stand-in for a measured target image: two legs from the apex plus a
    crossbar, on a size x size grid in image orientation (row 0 on top).
    """
    apex = np.array([0.50, 0.12])
    left = np.array([0.16, 0.90])
    right = np.array([0.84, 0.90])
    jj, ii = np.meshgrid(np.arange(size), np.arange(size))
    px = (jj + 0.5) / size
    py = (ii + 0.5) / size
    P = np.stack([px, py], axis=-1)

    def seg_dist(a, b):
        ab = b - a
        t = np.clip(((P - a) @ ab) / (ab @ ab), 0.0, 1.0)
        proj = a + t[..., None] * ab
        return np.linalg.norm(P - proj, axis=-1)

    bar_y = 0.62
    bar_l = apex + (left - apex) * (bar_y - apex[1]) / (left[1] - apex[1])
    bar_r = apex + (right - apex) * (bar_y - apex[1]) / (right[1] - apex[1])
    d = np.minimum.reduce(
        [seg_dist(apex, left), seg_dist(apex, right), seg_dist(bar_l, bar_r)]
    )
    return (d <= thickness / 2.0).astype(float)


def letter_a_target(size=96, half_side=0.30, floor_ratio=1e-3):
    """Letter-A plane target on the square [-half_side, half_side]^2 of z = 0.5."""
    vals = letter_a_raster(size)
    vals = np.where(vals > 0.0, vals, floor_ratio)
    return PlaneRaster(vals, (-half_side, half_side, -half_side, half_side))


def geometric_blend(target, easy, alpha, mass, n_polar=300, n_azimuth=300):
    """Intermediate continuation target g_mid ~ target^alpha * easy^(1-alpha).

    Evaluated pointwise with a small floor to keep the power well defined,
    then renormalised to ``mass``.
    """

    class _Blend(Intensity):
        scale = 1.0

        def eval(self, points):
            a = np.maximum(target.eval(points), 1e-12)
            b = np.maximum(easy.eval(points), 1e-12)
            sup = (target.eval(points) > 0) | (easy.eval(points) > 0)
            return self.scale * np.where(sup, a**alpha * b ** (1.0 - alpha), 0.0)

        def support_cap(self):
            ax1, h1 = target.support_cap()
            ax2, h2 = easy.support_cap()
            mid = sphere.unit(ax1 + ax2)
            spread = max(
                sphere.geodesic_distance(mid, ax1) + h1,
                sphere.geodesic_distance(mid, ax2) + h2,
            )
            return mid, min(spread, np.pi / 2 - 1e-3)

    blend = _Blend()
    return blend.scaled(mass / blend.total_mass(n_polar, n_azimuth))


# --- target boundaries ------------------------------------------------------


@dataclass(frozen=True)
class CapCircle:
    """Target boundary: the rim of a geodesic cap."""

    axis: np.ndarray
    halfangle: float

    def project(self, y, warn=None):
        return sphere.project_to_cap_boundary(y, self.axis, self.halfangle, warn=warn)

    def signed_distance(self, y):
        return sphere.signed_distance_to_cap_boundary(y, self.axis, self.halfangle)


@dataclass(frozen=True)
class Polyline:
    """Target boundary: closed geodesic polyline through ``points``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, float)
        if len(pts) < 3:
            raise InvalidParameter("polyline boundary needs at least 3 points")
        if np.any(np.linalg.norm(np.roll(pts, -1, 0) - pts, axis=1) < 1e-12):
            raise InvalidParameter("polyline has repeated consecutive points")
        object.__setattr__(self, "points", sphere.unit(pts))

    def project(self, y, warn=None):
        return sphere.project_to_polyline_boundary(y, self.points)

    def signed_distance(self, y):
        # unsigned distance to the polyline; sign is not needed downstream
        proj = self.project(y)
        return sphere.geodesic_distance(y, proj)
