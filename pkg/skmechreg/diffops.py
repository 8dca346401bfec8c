"""
Finite difference operators on displacement fields.

``gradient(u)[i, j]`` holds the derivative of the i-th component of ``u``
along the j-th axis, estimated with centred differences inside the grid and
one-sided differences on its faces (``numpy.gradient`` with
``edge_order=1``). The Jacobian of the mapping is ``J = I + grad(u)`` and the
infinitesimal strain tensor is ``S = (grad(u) + grad(u)^T) / 2``.

Millimetre forms
----------------

With anisotropic voxels of size ``(d1, d2, d3)`` the millimetre Jacobian
scales off-diagonal entries by ``d_i / d_j`` and puts ``d_i`` on the diagonal;
``normalize=True`` (the default) divides row ``i`` by ``d_i`` so the identity
mapping keeps a unit determinant. The millimetre strain uses
``(d_i / d_j * du_i/dx_j + d_j / d_i * du_j/dx_i) / 2`` off the diagonal.
"""

import numpy as _np

from .grid import ScalarVolume
from .utils import ShapeError, ParameterError, DomainError

# order of the unique entries of a symmetric tensor
SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))

_SYM_TOL = 1e-12
_GAP_TOL = 1e-10
_RESIDUAL_TOL = 1e-10


###############################################################################
# Containers
###############################################################################
class JacobianField:
    """
    Per-voxel 3x3 Jacobian matrices, ``data[i, j]`` of shape ``dims``.

    **Attributes**

    data : ndarray, shape (3, 3, nx, ny, nz)
    spacing : tuple
    mm : bool
        Millimetre form when True, voxel form otherwise.
    """

    def __init__(self, data, spacing, mm=False):
        self.data = data
        self.spacing = spacing
        self.mm = mm

    @property
    def dims(self):
        return self.data.shape[2:]

    def matrices(self):
        return _np.moveaxis(self.data, (0, 1), (-2, -1))

    def det(self):
        """Per-voxel determinant."""
        return _np.linalg.det(self.matrices())


class SymTensorField:
    """
    Per-voxel symmetric 3x3 tensors stored as their 6 unique entries
    ``(s11, s22, s33, s12, s13, s23)``.
    """

    def __init__(self, data, spacing, mm=False):
        self.data = data
        self.spacing = spacing
        self.mm = mm

    @property
    def dims(self):
        return self.data.shape[1:]

    def full(self):
        """The tensors as a ``(3, 3) + dims`` array."""
        out = _np.empty((3, 3) + self.dims)
        for k, (i, j) in enumerate(SYM_INDEX):
            out[i, j] = self.data[k]
            out[j, i] = self.data[k]
        return out

    def matrices(self):
        return _np.moveaxis(self.full(), (0, 1), (-2, -1))

    def trace(self):
        return self.data[0] + self.data[1] + self.data[2]

    def frobenius2(self):
        """Squared Frobenius norm, equal to the sum of squared eigenvalues."""
        d = self.data
        return (d[0] ** 2 + d[1] ** 2 + d[2] ** 2 +
                2. * (d[3] ** 2 + d[4] ** 2 + d[5] ** 2))

    def eigen(self):
        """:class:`EigenSystem` of every voxel (leading axes = dims)."""
        es = eig_sym3(self.matrices().reshape(-1, 3, 3))
        return EigenSystem(es.values.reshape(self.dims + (3,)),
                           es.vectors.reshape(self.dims + (3, 3)))


class EigenSystem:
    """
    Eigenvalues in descending order (``values[..., k]``) and the matching
    orthonormal eigenvectors as columns (``vectors[..., :, k]``).
    """

    def __init__(self, values, vectors):
        self.values = values
        self.vectors = vectors

    def reconstruct(self):
        return _np.einsum('...ik,...k,...jk->...ij',
                          self.vectors, self.values, self.vectors)


###############################################################################
# Differential operators
###############################################################################
def _field_data(u):
    data = u.data
    if min(data.shape[1:]) < 3:
        raise ShapeError("finite differences need at least 3 voxels per "
                         "axis, got {}".format(data.shape[1:]))
    return data


def gradient(u):
    """
    Displacement gradient ``G[i, j] = du_i / dx_j`` in voxel units.

    **Parameters**

    u : DisplacementField
        Field with at least 3 voxels along every axis.

    **Returns**

    ndarray of shape ``(3, 3) + dims``
    """
    data = _field_data(u)
    out = _np.empty((3, 3) + data.shape[1:])
    for i in range(3):
        for j in range(3):
            out[i, j] = _np.gradient(data[i], axis=j)
    return out


def gradient_adjoint(g):
    """
    Transpose of :func:`gradient`: maps ``dL/dG`` (``(3, 3) + dims``) to
    ``dL/du`` (``(3,) + dims``).
    """
    out = _np.zeros((3,) + g.shape[2:])
    for i in range(3):
        for j in range(3):
            out[i] += _difference_adjoint(g[i, j], j)
    return out


def _difference_adjoint(g, axis):
    g = _np.moveaxis(g, axis, 0)
    out = _np.zeros_like(g)
    out[2:] += 0.5 * g[1:-1]
    out[:-2] -= 0.5 * g[1:-1]
    out[1] += g[0]
    out[0] -= g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    return _np.moveaxis(out, 0, axis)


def _spacing_array(spacing):
    spacing = _np.asarray(spacing, dtype=float)
    if spacing.shape != (3,) or _np.any(spacing <= 0):
        raise ParameterError("mm forms need 3 strictly positive spacings")
    return spacing


def jacobian_coefficients(spacing, mm=False, normalize=True):
    """
    Affine map from the displacement gradient to the Jacobian:
    ``J[i, j] = base[i] * (i == j) + scale[i, j] * G[i, j]``.

    **Returns**

    base : ndarray, shape (3,)
    scale : ndarray, shape (3, 3)
    """
    if not mm:
        return _np.ones(3), _np.ones((3, 3))
    d = _spacing_array(spacing)
    if normalize:
        return _np.ones(3), _np.tile(1. / d, (3, 1))
    scale = d[:, None] / d[None, :]
    return d.copy(), scale


def strain_coefficients(spacing, mm=False):
    """Weights ``A[i, j]`` such that ``S = (A*G + (A*G)^T) / 2``."""
    if not mm:
        return _np.ones((3, 3))
    d = _spacing_array(spacing)
    return d[:, None] / d[None, :]


def jacobian(u, mm=False, normalize=True):
    """
    Jacobian matrix field of ``Phi(x) = x + u(x)``.

    **Parameters**

    u : DisplacementField
    mm : bool
        Millimetre form (uses ``u.spacing``).
    normalize : bool
        In millimetre form, divide row ``i`` by ``d_i`` so that ``u = 0``
        gives the identity.

    **Returns**

    JacobianField
    """
    base, scale = jacobian_coefficients(u.spacing, mm, normalize)
    grad = gradient(u)
    data = scale[:, :, None, None, None] * grad
    for i in range(3):
        data[i, i] += base[i]
    return JacobianField(data, u.spacing, mm)


def log_det(J, eps=1e-6):
    """
    ``log(max(det J, eps))`` per voxel.

    **Parameters**

    J : JacobianField
    eps : float
        Positive floor applied to the determinant (default 1e-6).

    **Returns**

    ScalarVolume
    """
    if not eps > 0:
        raise ParameterError("eps must be strictly positive")
    return ScalarVolume(_np.log(_np.maximum(J.det(), eps)), J.spacing)


def cofactor(m):
    """
    Cofactor matrices of a ``(3, 3) + dims`` field, i.e. the derivative of
    the determinant with respect to each entry.
    """
    a, b, c = m[0, 0], m[0, 1], m[0, 2]
    d, e, f = m[1, 0], m[1, 1], m[1, 2]
    g, h, i = m[2, 0], m[2, 1], m[2, 2]
    return _np.array([
        [e * i - f * h, f * g - d * i, d * h - e * g],
        [c * h - b * i, a * i - c * g, b * g - a * h],
        [b * f - c * e, c * d - a * f, a * e - b * d],
    ])


def strain(u, mm=False):
    """
    Infinitesimal strain tensor field ``S = (grad u + grad u^T) / 2``.

    **Parameters**

    u : DisplacementField
    mm : bool
        Millimetre form (uses ``u.spacing``).

    **Returns**

    SymTensorField
    """
    return strain_from_gradient(gradient(u), u.spacing, mm)


def strain_from_gradient(grad, spacing, mm=False):
    """Strain of an already computed displacement gradient."""
    a = strain_coefficients(spacing, mm)
    data = _np.empty((6,) + grad.shape[2:])
    for k, (i, j) in enumerate(SYM_INDEX):
        data[k] = 0.5 * (a[i, j] * grad[i, j] + a[j, i] * grad[j, i])
    return SymTensorField(data, spacing, mm)


###############################################################################
# Symmetric 3x3 eigendecomposition
###############################################################################
def eig_sym3(S):
    """
    Eigendecomposition of symmetric 3x3 matrices.

    Eigenvalues come from the trigonometric solution of the characteristic
    polynomial. The eigenvector of the most isolated eigenvalue is the
    largest cross product of two rows of ``S - lambda I``; the remaining pair
    is solved as a 2x2 problem in the orthogonal complement, which keeps the
    basis orthonormal when those two eigenvalues coincide. Fully degenerate
    matrices, and any matrix whose residual ``|S v - lambda v|`` exceeds
    ``1e-10 |S|``, go through ``numpy.linalg.eigh`` (Householder reduction)
    instead.

    Each eigenvector is signed so that its largest-magnitude component is
    positive.

    **Parameters**

    S : array_like
        A symmetric matrix of shape ``(3, 3)`` or a stack ``(n, 3, 3)``.

    **Returns**

    EigenSystem
        ``values`` of shape ``(3,)`` or ``(n, 3)``, descending, and
        ``vectors`` of shape ``(3, 3)`` or ``(n, 3, 3)`` (columns).
    """
    S = _np.asarray(S, dtype=float)
    single = S.ndim == 2
    A = S.reshape(-1, 3, 3)
    if A.shape[1:] != (3, 3):
        raise ShapeError("eig_sym3 expects 3x3 matrices")
    scale = _np.max(_np.abs(A), axis=(1, 2))
    asym = _np.max(_np.abs(A - A.transpose(0, 2, 1)), axis=(1, 2))
    if _np.any(asym > _SYM_TOL * _np.maximum(scale, 1.)):
        raise DomainError("matrix is not symmetric")
    A = 0.5 * (A + A.transpose(0, 2, 1))
    n = A.shape[0]

    q = _np.trace(A, axis1=1, axis2=2) / 3.
    p1 = A[:, 0, 1] ** 2 + A[:, 0, 2] ** 2 + A[:, 1, 2] ** 2
    p2 = ((A[:, 0, 0] - q) ** 2 + (A[:, 1, 1] - q) ** 2 +
          (A[:, 2, 2] - q) ** 2 + 2. * p1)
    p = _np.sqrt(p2 / 6.)
    tiny = _np.finfo(float).tiny
    usable = p > _GAP_TOL * _np.maximum(scale, tiny)

    values = _np.repeat(q[:, None], 3, axis=1)
    vectors = _np.tile(_np.eye(3), (n, 1, 1))

    if _np.any(usable):
        Au, qu, pu = A[usable], q[usable], p[usable]
        B = (Au - qu[:, None, None] * _np.eye(3)) / pu[:, None, None]
        r = _np.clip(_np.linalg.det(B) / 2., -1., 1.)
        phi = _np.arccos(r) / 3.
        l1 = qu + 2. * pu * _np.cos(phi)
        l3 = qu + 2. * pu * _np.cos(phi + 2. * _np.pi / 3.)
        l2 = 3. * qu - l1 - l3
        top_isolated = (l1 - l2) >= (l2 - l3)
        lam = _np.where(top_isolated, l1, l3)
        w = _isolated_vector(Au, lam)
        e1, e2 = _complement_basis(w)
        m00 = _np.einsum('ni,nij,nj->n', e1, Au, e1)
        m11 = _np.einsum('ni,nij,nj->n', e2, Au, e2)
        m01 = _np.einsum('ni,nij,nj->n', e1, Au, e2)
        mean = 0.5 * (m00 + m11)
        rad = _np.hypot(0.5 * (m00 - m11), m01)
        theta = 0.5 * _np.arctan2(2. * m01, m00 - m11)
        c, s = _np.cos(theta)[:, None], _np.sin(theta)[:, None]
        big = c * e1 + s * e2
        small = -s * e1 + c * e2
        vals = _np.where(top_isolated[:, None],
                         _np.stack([lam, mean + rad, mean - rad], axis=1),
                         _np.stack([mean + rad, mean - rad, lam], axis=1))
        vecs = _np.where(top_isolated[:, None, None],
                         _np.stack([w, big, small], axis=2),
                         _np.stack([big, small, w], axis=2))
        order = _np.argsort(-vals, axis=1, kind='stable')
        vals = _np.take_along_axis(vals, order, axis=1)
        vecs = _np.take_along_axis(vecs, order[:, None, :], axis=2)
        values[usable] = vals
        vectors[usable] = vecs

    residual = _np.max(_np.abs(_np.einsum('nij,njk->nik', A, vectors) -
                               vectors * values[:, None, :]), axis=(1, 2))
    gram = _np.einsum('nji,njk->nik', vectors, vectors) - _np.eye(3)
    fallback = ~((residual <= _RESIDUAL_TOL * _np.maximum(scale, tiny)) &
                 (_np.max(_np.abs(gram), axis=(1, 2)) <= _RESIDUAL_TOL))
    if _np.any(fallback):
        vals, vecs = _np.linalg.eigh(A[fallback])
        values[fallback] = vals[:, ::-1]
        vectors[fallback] = vecs[:, :, ::-1]

    vectors = _fix_signs(vectors)
    if single:
        return EigenSystem(values[0], vectors[0])
    return EigenSystem(values, vectors)


def _isolated_vector(A, lam):
    M = A - lam[:, None, None] * _np.eye(3)
    crosses = _np.stack([_np.cross(M[:, 0], M[:, 1]),
                         _np.cross(M[:, 0], M[:, 2]),
                         _np.cross(M[:, 1], M[:, 2])], axis=1)
    norms = _np.linalg.norm(crosses, axis=2)
    best = _np.argmax(norms, axis=1)
    rows = _np.arange(len(A))
    v = crosses[rows, best]
    length = norms[rows, best]
    # rank deficiency below 2 only happens for degenerate spectra,
    # which the residual check hands over to eigh
    length = _np.where(length > 0, length, 1.)
    return v / length[:, None]


def _complement_basis(w):
    axis = _np.zeros_like(w)
    axis[_np.arange(len(w)), _np.argmin(_np.abs(w), axis=1)] = 1.
    e1 = _np.cross(w, axis)
    length = _np.linalg.norm(e1, axis=1)
    e1 /= _np.where(length > 0, length, 1.)[:, None]
    e2 = _np.cross(w, e1)
    return e1, e2


def _fix_signs(vectors):
    idx = _np.argmax(_np.abs(vectors), axis=-2)
    lead = _np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    return vectors * _np.where(lead < 0, -1., 1.)
