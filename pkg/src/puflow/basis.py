"""Lagrange basis functions on the reference triangle.

The reference element has vertices (0,0), (1,0), (0,1) and barycentric
coordinates ``lam = (1-x-y, x, y)``. Node ordering:

* P1: the three vertices,
* P2: the three vertices followed by the edge midpoints of local edges
  (0,1), (1,2), (2,0).

Gradients are taken with respect to the reference coordinates (x, y).
"""

import numpy as np

#: local edges of the reference triangle, in P2 node order
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

# gradients of the barycentric coordinates w.r.t. (x, y)
_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def check_barycentric(lam, tol=1e-12):
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != 3:
        raise ValueError("barycentric point must have 3 components")
    if np.any(lam < -tol) or np.any(np.abs(lam.sum(axis=-1) - 1.0) > tol):
        raise ValueError("invalid barycentric coordinates: %r" % (lam,))
    return lam


def eval_basis(kind, lam, check=True):
    """Evaluate P1 or P2 basis values and reference gradients.

    Parameters
    ----------
    kind : str
        "P1" or "P2".
    lam : array_like, shape (..., 3)
        Barycentric evaluation points.
    check : bool
        Validate the barycentric coordinates (nonnegative, summing to 1).

    Returns
    -------
    values : ndarray, shape (..., nloc)
    gradients : ndarray, shape (..., nloc, 2)
    """
    lam = np.asarray(lam, dtype=float)
    if check:
        check_barycentric(lam)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    if kind == "P1":
        values = np.stack([l0, l1, l2], axis=-1)
        grads = np.broadcast_to(_DLAM, lam.shape[:-1] + (3, 2)).copy()
        return values, grads
    if kind == "P2":
        values = np.stack([
            l0 * (2.0 * l0 - 1.0),
            l1 * (2.0 * l1 - 1.0),
            l2 * (2.0 * l2 - 1.0),
            4.0 * l0 * l1,
            4.0 * l1 * l2,
            4.0 * l2 * l0,
        ], axis=-1)
        lam_g = (4.0 * lam - 1.0)[..., :, None] * _DLAM  # d/dx lam_i(2lam_i-1)
        grads = np.stack([
            lam_g[..., 0, :],
            lam_g[..., 1, :],
            lam_g[..., 2, :],
            4.0 * (l0[..., None] * _DLAM[1] + l1[..., None] * _DLAM[0]),
            4.0 * (l1[..., None] * _DLAM[2] + l2[..., None] * _DLAM[1]),
            4.0 * (l2[..., None] * _DLAM[0] + l0[..., None] * _DLAM[2]),
        ], axis=-2)
        return values, grads
    raise ValueError("unknown basis kind %r" % (kind,))


def n_local(kind):
    return {"P1": 3, "P2": 6}[kind]
