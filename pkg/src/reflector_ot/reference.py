"""Reference-element machinery: Lagrange bases on the unit triangle, symmetric
triangle quadrature, 1D Gauss rules, and the isoparametric chart evaluation
shared by the mesh statistics and the finite element assembly."""

import numpy as np

from .errors import AssemblyError

# Local node order on the reference triangle (vertices, then edge midpoints):
#   0:(0,0)  1:(1,0)  2:(0,1)  3:mid(0,1)  4:mid(1,2)  5:mid(2,0)
VERTEX_REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
P2_REF = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]
)
# local corner pairs bounding each midpoint node
EDGE_LOCAL = ((0, 1), (1, 2), (2, 0))


def p1_basis(pts):
    """P1 values at reference points, shape (npts, 3)."""
    pts = np.asarray(pts, float)
    xi, eta = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - xi - eta, xi, eta], axis=1)


def p1_grad(pts):
    """P1 reference gradients, shape (npts, 3, 2); constant in the point."""
    npts = len(np.atleast_2d(pts))
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.broadcast_to(g, (npts, 3, 2)).copy()


def p2_basis(pts):
    """P2 values at reference points, shape (npts, 6)."""
    pts = np.asarray(pts, float)
    lam0 = 1.0 - pts[:, 0] - pts[:, 1]
    lam1 = pts[:, 0]
    lam2 = pts[:, 1]
    return np.stack(
        [
            lam0 * (2.0 * lam0 - 1.0),
            lam1 * (2.0 * lam1 - 1.0),
            lam2 * (2.0 * lam2 - 1.0),
            4.0 * lam0 * lam1,
            4.0 * lam1 * lam2,
            4.0 * lam2 * lam0,
        ],
        axis=1,
    )


def p2_grad(pts):
    """P2 reference gradients, shape (npts, 6, 2)."""
    pts = np.asarray(pts, float)
    lam0 = 1.0 - pts[:, 0] - pts[:, 1]
    lam1 = pts[:, 0]
    lam2 = pts[:, 1]
    d0 = np.array([-1.0, -1.0])
    d1 = np.array([1.0, 0.0])
    d2 = np.array([0.0, 1.0])
    g = np.empty((len(pts), 6, 2))
    g[:, 0] = (4.0 * lam0 - 1.0)[:, None] * d0
    g[:, 1] = (4.0 * lam1 - 1.0)[:, None] * d1
    g[:, 2] = (4.0 * lam2 - 1.0)[:, None] * d2
    g[:, 3] = 4.0 * (lam0[:, None] * d1 + lam1[:, None] * d0)
    g[:, 4] = 4.0 * (lam1[:, None] * d2 + lam2[:, None] * d1)
    g[:, 5] = 4.0 * (lam2[:, None] * d0 + lam0[:, None] * d2)
    return g


def basis(degree):
    """(values_fn, grads_fn, n_local) for Lagrange degree 1 or 2."""
    if degree == 1:
        return p1_basis, p1_grad, 3
    if degree == 2:
        return p2_basis, p2_grad, 6
    raise ValueError(f"unsupported Lagrange degree {degree}")


def _perm3(a):
    return [(1.0 - 2.0 * a, a, a), (a, 1.0 - 2.0 * a, a), (a, a, 1.0 - 2.0 * a)]


def _perm6(a, b):
    c = 1.0 - a - b
    return [(c, a, b), (c, b, a), (a, c, b), (b, c, a), (a, b, c), (b, a, c)]


def triangle_quadrature(degree):
    """Symmetric Gauss rule on the reference triangle exact to ``degree``.

    Returns (points (nq, 2), weights (nq,)); the weights include the
    reference-triangle area, i.e. sum(weights) == 1/2.
    """
    if degree <= 2:
        bary = _perm3(1.0 / 6.0)
        w = [1.0 / 3.0] * 3
    elif degree <= 4:
        bary = _perm3(0.445948490915965) + _perm3(0.091576213509771)
        w = [0.223381589678011] * 3 + [0.109951743655322] * 3
    elif degree <= 6:
        bary = (
            _perm3(0.249286745170910)
            + _perm3(0.063089014491502)
            + _perm6(0.310352451033785, 0.053145049844816)
        )
        w = [0.116786275726379] * 3 + [0.050844906370207] * 3 + [0.082851075618374] * 6
    else:
        raise ValueError(f"no triangle rule of degree {degree} available")
    lam = np.array(bary)
    pts = lam[:, 1:]  # (xi, eta) = (lambda1, lambda2)
    return pts, 0.5 * np.array(w)


def gauss_1d(npoints):
    """Gauss-Legendre rule mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


def edge_basis(order, t):
    """1D Lagrange trace basis on an edge, shape (nt, order + 1).

    Node order matches the edge node layout (end, end, midpoint) for order 2.
    """
    t = np.asarray(t, float)
    if order == 1:
        return np.stack([1.0 - t, t], axis=1)
    if order == 2:
        return np.stack([(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)], axis=1)
    raise ValueError(f"unsupported edge order {order}")


def edge_basis_deriv(order, t):
    """Derivative of edge_basis with respect to t."""
    t = np.asarray(t, float)
    if order == 1:
        return np.stack([-np.ones_like(t), np.ones_like(t)], axis=1)
    if order == 2:
        return np.stack([4.0 * t - 3.0, 4.0 * t - 1.0, 4.0 - 8.0 * t], axis=1)
    raise ValueError(f"unsupported edge order {order}")


def chart_jacobian(node_coords, grads):
    """Chart Jacobians J = dx/dxi for a batch of elements.

    node_coords : (nelem, nloc, 3) geometric node positions
    grads       : (nq, nloc, 2) reference gradients of the geometry basis
    returns (nelem, nq, 3, 2)
    """
    return np.einsum("enk,qnj->eqkj", node_coords, grads)


def metric_and_weights(J, qweights):
    """First fundamental form data for a batch of chart Jacobians.

    Returns (G, detG, warea) where G = J^T J is (nelem, nq, 2, 2), detG its
    determinant and warea the physical quadrature weights sqrt(detG) * w.
    Raises AssemblyError when an element Jacobian degenerates.
    """
    G = np.einsum("eqki,eqkj->eqij", J, J)
    detG = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    if np.any(detG <= 0.0):
        raise AssemblyError("degenerate element chart (non-positive metric determinant)")
    return G, detG, np.sqrt(detG) * qweights[None, :]


def surface_gradients(J, G, detG, ref_grads):
    """Push reference gradients to tangential physical gradients J G^{-1} grad.

    ref_grads : (nq, nb, 2); returns (nelem, nq, nb, 3).
    """
    inv = np.empty_like(G)
    inv[..., 0, 0] = G[..., 1, 1]
    inv[..., 1, 1] = G[..., 0, 0]
    inv[..., 0, 1] = -G[..., 0, 1]
    inv[..., 1, 0] = -G[..., 1, 0]
    inv /= detG[..., None, None]
    JGinv = np.einsum("eqki,eqij->eqkj", J, inv)
    return np.einsum("eqkj,qbj->eqbk", JGinv, ref_grads)
