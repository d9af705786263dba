"""Closed-form differential geometry of the unit sphere and the log transport cost.

Points on the sphere and tangent vectors are plain ndarrays of shape (..., 3);
every function broadcasts over leading axes.  Tangent vectors are understood
relative to an explicit base point and are kept orthogonal to it.  The cost
sign ``s`` selects the transport cost s*log(1 - x.y): s = -1 is the classical
reflector cost, s = +1 the companion cost whose potential exponentiates with
the opposite sign.
"""

import numpy as np

from .errors import DegenerateInput, DomainError

# 1 - x.y below this is treated as the cost singularity.
SINGULARITY_GUARD = 1e-12


def unit(v):
    """Normalise ``v`` along the last axis, raising on (near-)zero input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-300):
        raise DomainError("cannot normalise a zero vector")
    return v / n


def dot(a, b):
    """Row-wise dot product along the last axis."""
    return np.sum(np.asarray(a, float) * np.asarray(b, float), axis=-1)


def tangent_project(base, v):
    """Project ``v`` onto the tangent plane at the unit vector ``base``."""
    base = np.asarray(base, float)
    v = np.asarray(v, float)
    return v - dot(base, v)[..., None] * base


def check_cost_sign(s):
    """Validate a cost sign, returning it as a Python int in {-1, +1}."""
    s = int(s)
    if s not in (-1, 1):
        raise DomainError(f"cost sign must be -1 or +1, got {s}")
    return s


def tangent_basis(x):
    """Deterministic orthonormal tangent frame (e1, e2) at x with e1 x e2 = x.

    Seeds with the global axis least aligned with x so the frame is smooth on
    either polar cap.
    """
    x = np.asarray(x, float)
    seed = np.zeros_like(x)
    pick = np.abs(x[..., 0]) <= 0.9
    seed[..., 0] = np.where(pick, 1.0, 0.0)
    seed[..., 2] = np.where(pick, 0.0, 1.0)
    e1 = unit(tangent_project(x, seed))
    e2 = np.cross(x, e1)
    return e1, e2


def cost(x, y, s):
    """Transport cost c(x, y) = s * log(1 - x.y).

    Raises DomainError when 1 - x.y falls below the singularity guard.
    """
    s = check_cost_sign(s)
    one_minus = 1.0 - dot(x, y)
    if np.any(one_minus <= SINGULARITY_GUARD):
        raise DomainError("cost singularity: x.y too close to 1")
    return s * np.log(one_minus)


def grad_x_cost(x, y, s):
    """Tangential x-gradient of the cost, -s (y - (x.y) x) / (1 - x.y)."""
    s = check_cost_sign(s)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xy = dot(x, y)
    one_minus = 1.0 - xy
    if np.any(one_minus <= SINGULARITY_GUARD):
        raise DomainError("cost singularity: x.y too close to 1")
    return (-s) * (y - xy[..., None] * x) / one_minus[..., None]


def reflector_map(x, p, s):
    """Optical map y = ((|p|^2 - 1) x + 2 s p) / (|p|^2 + 1).

    ``p`` is a tangent vector at ``x`` (the potential gradient).  The output
    is renormalised defensively and is the exact unit-sphere image for exact
    inputs; the formula is global, no preconditions.
    """
    s = check_cost_sign(s)
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    p2 = dot(p, p)[..., None]
    y = ((p2 - 1.0) * x + (2.0 * s) * p) / (p2 + 1.0)
    return unit(y)


def inverse_map(x, y, s):
    """Tangent vector p with reflector_map(x, p, s) = y, i.e. -grad_x_cost."""
    return -grad_x_cost(x, y, s)


def exp_map(x, v):
    """Exponential map: walk the geodesic from x with tangent velocity v."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    small = nv < 1e-14
    # guard the division; sin(|v|)/|v| -> 1 as |v| -> 0
    safe = np.where(small, 1.0, nv)
    out = np.cos(nv) * x + np.sin(safe) / safe * v
    return unit(np.where(small, x, out))


def log_map(x, y):
    """Inverse of exp_map: tangent vector at x pointing to y with |v| = dist.

    Returns the zero vector for y = x and raises DegenerateInput for y = -x
    (antipodal direction undefined).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    c = np.clip(dot(x, y), -1.0, 1.0)
    t = tangent_project(x, y)
    nt = np.linalg.norm(t, axis=-1)
    ang = np.arccos(c)
    if np.any((nt < 1e-14) & (c < 0.0)):
        raise DegenerateInput("log map undefined at the antipode")
    scale = np.where(nt < 1e-14, 0.0, ang / np.where(nt < 1e-14, 1.0, nt))
    return scale[..., None] * t


def geodesic_distance(x, y):
    """Great-circle distance arccos(clamp(x.y)) in [0, pi]."""
    return np.arccos(np.clip(dot(x, y), -1.0, 1.0))


def signed_distance_to_cap_boundary(y, axis, halfangle):
    """Signed geodesic distance to the cap rim: negative inside the cap."""
    return geodesic_distance(y, axis) - halfangle


def project_to_cap_boundary(y, axis, halfangle, warn=None):
    """Closest point on the circle {polar angle = halfangle about axis}.

    Rotates y along the great circle through the axis until the polar angle
    equals ``halfangle``.  At the axis or its antipode the great circle is not
    unique; the point at azimuth zero is returned and ``warn`` (if given) is
    called with a message.
    """
    y = np.asarray(y, float)
    axis = np.asarray(axis, float)
    scalar = y.ndim == 1
    y2 = np.atleast_2d(y)
    t = tangent_project(axis, y2)
    nt = np.linalg.norm(t, axis=-1)
    bad = nt < 1e-12
    if np.any(bad):
        if warn is not None:
            warn("project_to_cap_boundary: query at cap axis; azimuth-0 point used")
        e1, _ = tangent_basis(axis)
        e1 = np.broadcast_to(e1, y2.shape)
        t = np.where(bad[..., None], e1, t)
        nt = np.where(bad, 1.0, nt)
    that = t / nt[..., None]
    out = np.cos(halfangle) * axis + np.sin(halfangle) * that
    return out[0] if scalar else out


def project_to_polyline_boundary(y, points):
    """Closest point on a closed geodesic polyline through ``points``.

    Each segment is a minor great-circle arc; the query is projected onto
    every arc (clamped to the endpoints) and the nearest candidate wins,
    ties broken by lowest segment index.
    """
    y = np.asarray(y, float)
    pts = np.asarray(points, float)
    scalar = y.ndim == 1
    yq = np.atleast_2d(y)  # (m, 3)
    a = pts  # (k, 3)
    b = np.roll(pts, -1, axis=0)  # (k, 3)
    # great-circle pole of each segment
    n = np.cross(a, b)
    nn = np.linalg.norm(n, axis=-1)
    if np.any(nn < 1e-14):
        raise DegenerateInput("polyline has coincident or antipodal neighbours")
    n = n / nn[..., None]
    # foot of the perpendicular from y onto each great circle
    proj = yq[:, None, :] - (yq @ n.T)[..., None] * n[None, :, :]  # (m, k, 3)
    pn = np.linalg.norm(proj, axis=-1)
    deg = pn < 1e-14  # y at a pole: whole circle equidistant, use endpoint a
    proj = np.where(deg[..., None], a[None, :, :], proj / np.where(deg, 1.0, pn)[..., None])
    # clamp feet that leave the arc back to the nearer endpoint
    seg = geodesic_distance(a, b)  # (k,)
    da = geodesic_distance(proj, a[None, :, :])
    db = geodesic_distance(proj, b[None, :, :])
    off_arc = (da + db) > (seg[None, :] + 1e-12)
    use_a = geodesic_distance(yq[:, None, :], a[None, :, :]) <= geodesic_distance(
        yq[:, None, :], b[None, :, :]
    )
    endpoint = np.where(use_a[..., None], a[None, :, :], np.broadcast_to(b, proj.shape))
    cand = np.where(off_arc[..., None], endpoint, proj)
    d = geodesic_distance(yq[:, None, :], cand)
    best = np.argmin(d, axis=1)  # lowest index wins ties by argmin convention
    out = cand[np.arange(len(yq)), best]
    return out[0] if scalar else out


# --- central ("stereographic") lift between the plane z = 0.5 and the sphere ---

PLANE_HEIGHT = 0.5
# directions with x3 at or below this never reach the plane
PLANE_VISIBILITY_FLOOR = 0.05


def direction_to_plane(x):
    """Central projection from the origin: direction x -> point (X, Y) on z = 0.5.

    Only defined for x3 > 0; callers filter by PLANE_VISIBILITY_FLOOR.
    """
    x = np.asarray(x, float)
    return PLANE_HEIGHT * x[..., :2] / x[..., 2:3]


def plane_to_direction(XY):
    """Inverse central projection: plane point to unit direction with x3 > 0."""
    XY = np.asarray(XY, float)
    z = np.full(XY.shape[:-1] + (1,), PLANE_HEIGHT)
    return unit(np.concatenate([XY, z], axis=-1))


def lift_area_factor(XY):
    """Area Jacobian of the central projection, (X^2 + Y^2 + 0.25)^{3/2} / 0.5.

    Multiplying a plane density by this factor yields the matching density on
    the sphere: the lifted mass on the visible cap equals the plane mass.
    """
    XY = np.asarray(XY, float)
    r2 = np.sum(XY * XY, axis=-1)
    return (r2 + PLANE_HEIGHT**2) ** 1.5 / PLANE_HEIGHT


def rotation_to(a, b):
    """3x3 rotation matrix carrying unit vector a to unit vector b."""
    a = unit(np.asarray(a, float))
    b = unit(np.asarray(b, float))
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c < -1.0 + 1e-14:
        # pi rotation about any axis orthogonal to a
        e1, _ = tangent_basis(a)
        return 2.0 * np.outer(e1, e1) - np.eye(3)
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)
