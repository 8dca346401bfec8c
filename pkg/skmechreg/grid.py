"""
Containers for 3D grids and the resampling machinery built on them.

Volumes are stored as ``(nx, ny, nz)`` arrays indexed ``[x, y, z]`` and
vector fields as ``(3, nx, ny, nz)`` arrays whose components are expressed in
voxel units. A displacement field ``u`` defines the mapping
``Phi(x) = x + u(x)`` from fixed-image coordinates to moving-image
coordinates; voxel spacing (millimetres per voxel) only matters to the
differential operators of :mod:`skmechreg.diffops`.

Outside the grid, sampling clamps to the nearest edge voxel.
"""

import numpy as _np
from scipy import ndimage as _ndi

from .utils import ShapeError, ParameterError, DomainError, DataError


###############################################################################
# Containers
###############################################################################
class ScalarVolume:
    """
    3D scalar grid: an image (intensities normalised to [0, 1]) or a label
    map (integer-valued reals).

    **Parameters**

    data : array_like
        Array of shape ``(nx, ny, nz)``.
    spacing : sequence of 3 floats
        Millimetres per voxel along each axis. Default ``(1, 1, 1)``.
    """

    def __init__(self, data, spacing=(1., 1., 1.)):
        data = _np.asarray(data, dtype=float)
        if data.ndim != 3:
            raise ShapeError("a volume needs 3 dimensions, got {}"
                             .format(data.ndim))
        self.data = data
        self.spacing = _check_spacing(spacing)
        if not _np.all(_np.isfinite(self.data)):
            raise DataError("volume contains non-finite values")

    @property
    def dims(self):
        return self.data.shape

    def copy(self):
        return type(self)(self.data.copy(), self.spacing)

    def __repr__(self):
        return '{}(dims={}, spacing={})'.format(
            type(self).__name__, self.dims, self.spacing)


class DisplacementField:
    """
    Per-voxel 3-vector field ``u`` in voxel units.

    **Parameters**

    data : array_like
        Array of shape ``(3, nx, ny, nz)``.
    spacing : sequence of 3 floats
        Millimetres per voxel along each axis.
    """

    def __init__(self, data, spacing=(1., 1., 1.)):
        data = _np.asarray(data, dtype=float)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ShapeError("a vector field needs shape (3, nx, ny, nz), "
                             "got {}".format(data.shape))
        self.data = data
        self.spacing = _check_spacing(spacing)
        if not _np.all(_np.isfinite(self.data)):
            raise DataError("field contains non-finite values")

    @classmethod
    def zeros(cls, dims, spacing=(1., 1., 1.)):
        return cls(_np.zeros((3,) + tuple(dims)), spacing)

    @property
    def dims(self):
        return self.data.shape[1:]

    def norm(self):
        """Per-voxel Euclidean length of the vectors."""
        return _np.sqrt(_np.sum(self.data ** 2, axis=0))

    def copy(self):
        return type(self)(self.data.copy(), self.spacing)

    def __neg__(self):
        return type(self)(-self.data, self.spacing)

    def __repr__(self):
        return '{}(dims={}, spacing={})'.format(
            type(self).__name__, self.dims, self.spacing)


class VelocityField(DisplacementField):
    """
    Stationary velocity field, same layout as :class:`DisplacementField`.
    Its exponential, computed by :func:`integrate_svf`, is a diffeomorphic
    displacement field.
    """
    pass


def _check_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ShapeError("spacing needs 3 components")
    if not all(_np.isfinite(s) and s > 0 for s in spacing):
        raise ParameterError("spacing components must be strictly positive")
    return spacing


def _check_same_dims(*grids):
    dims = [tuple(g.dims) for g in grids]
    if any(d != dims[0] for d in dims):
        raise ShapeError("grid dimensions differ: {}".format(dims))


def identity_grid(dims):
    """Voxel coordinates of every grid node, shape ``(3,) + dims``."""
    return _np.indices(dims, dtype=float)


###############################################################################
# Trilinear sampling
###############################################################################
class Trilinear:
    """
    Trilinear sampler for a fixed set of sample points.

    The corner indices and weights are computed once, then reused to
    ``pull`` values from any array on the grid, to take the derivative of
    the sampled values with respect to the sample points (``grad``) and to
    scatter values back onto the grid (``push``, the adjoint of ``pull``).
    Points outside ``[0, n-1]`` along an axis are clamped to the edge, where
    the derivative along that axis is zero.

    **Parameters**

    coords : ndarray
        Continuous voxel coordinates, shape ``(3,) + pts_shape``.
    dims : tuple of 3 ints
        Shape of the sampled grid.
    """

    def __init__(self, coords, dims):
        coords = _np.asarray(coords, dtype=float)
        if coords.shape[0] != 3:
            raise ShapeError("coordinates need a leading axis of size 3")
        if not _np.all(_np.isfinite(coords)):
            raise DomainError("sample coordinates must be finite")
        self.dims = tuple(int(n) for n in dims)
        self.pts_shape = coords.shape[1:]
        i0, i1, frac, slope = [], [], [], []
        for k, n in enumerate(self.dims):
            c = coords[k].ravel()
            clamped = _np.clip(c, 0, n - 1)
            lo = _np.maximum(_np.minimum(_np.floor(clamped), n - 2), 0)
            lo = lo.astype(_np.intp)
            i0.append(lo)
            i1.append(_np.minimum(lo + 1, n - 1))
            frac.append(clamped - lo)
            slope.append(((c >= 0) & (c <= n - 1)).astype(float))
        self._frac = frac
        self._slope = slope
        ny, nz = self.dims[1], self.dims[2]
        self._corners = []
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    ix = i1[0] if dx else i0[0]
                    iy = i1[1] if dy else i0[1]
                    iz = i1[2] if dz else i0[2]
                    self._corners.append(((dx, dy, dz),
                                          (ix * ny + iy) * nz + iz))

    def _axis_weights(self, k, d):
        return self._frac[k] if d else 1. - self._frac[k]

    def _weight(self, bits):
        return (self._axis_weights(0, bits[0]) *
                self._axis_weights(1, bits[1]) *
                self._axis_weights(2, bits[2]))

    def _flat(self, data):
        data = _np.asarray(data, dtype=float)
        if data.shape[-3:] != self.dims:
            raise ShapeError("data shape {} does not match sampler grid {}"
                             .format(data.shape, self.dims))
        lead = data.shape[:-3]
        return data.reshape(lead + (-1,)), lead

    def pull(self, data):
        """Sample ``data`` (shape ``lead + dims``) at the points."""
        flat, lead = self._flat(data)
        out = _np.zeros(lead + (len(self._frac[0]),))
        for bits, lin in self._corners:
            out += self._weight(bits) * flat[..., lin]
        return out.reshape(lead + self.pts_shape)

    def grad(self, data):
        """
        Derivative of the sampled values with respect to the sample point.

        **Returns**

        ndarray of shape ``lead + (3,) + pts_shape``
        """
        flat, lead = self._flat(data)
        npts = len(self._frac[0])
        out = _np.zeros(lead + (3, npts))
        for bits, lin in self._corners:
            values = flat[..., lin]
            for k in range(3):
                w = _np.ones(npts)
                for j in range(3):
                    if j == k:
                        w = w * (1. if bits[j] else -1.) * self._slope[j]
                    else:
                        w = w * self._axis_weights(j, bits[j])
                out[..., k, :] += w * values
        return out.reshape(lead + (3,) + self.pts_shape)

    def push(self, values):
        """
        Scatter ``values`` (shape ``lead + pts_shape``) onto the grid with
        the interpolation weights; the transpose of :meth:`pull`.
        """
        values = _np.asarray(values, dtype=float)
        lead = values.shape[:values.ndim - len(self.pts_shape)]
        flat = values.reshape(lead + (-1,))
        size = int(_np.prod(self.dims))
        out = _np.zeros(lead + (size,))
        for bits, lin in self._corners:
            w = self._weight(bits)
            for idx in _np.ndindex(*lead):
                out[idx] += _np.bincount(lin, weights=w * flat[idx],
                                         minlength=size)
        return out.reshape(lead + self.dims)


###############################################################################
# Operations
###############################################################################
def interpolate(vol, p):
    """
    Trilinear interpolation of ``vol`` at continuous voxel coordinate(s).

    **Parameters**

    vol : ScalarVolume
        Volume to sample.
    p : array_like
        A single point ``(x, y, z)`` or an array of points with a leading
        axis of size 3.

    **Returns**

    float or ndarray
        Interpolated value(s); points outside the grid are clamped to it.
    """
    p = _np.asarray(p, dtype=float)
    if not _np.all(_np.isfinite(p)):
        raise DomainError("interpolation point must be finite")
    value = Trilinear(p, vol.dims).pull(vol.data)
    return float(value) if p.ndim == 1 else value


def warp(moving, u):
    """
    Resample ``moving`` through ``u``: ``out(x) = moving(x + u(x))``.

    **Parameters**

    moving : ScalarVolume
    u : DisplacementField
        Must share dims with ``moving``.

    **Returns**

    ScalarVolume
        Warped volume with ``u``'s spacing.
    """
    _check_same_dims(moving, u)
    coords = identity_grid(u.dims) + u.data
    return ScalarVolume(Trilinear(coords, moving.dims).pull(moving.data),
                        u.spacing)


def warp_labels(labels, u):
    """
    Nearest-neighbour warping of a label map, for overlap metrics.
    """
    _check_same_dims(labels, u)
    coords = identity_grid(u.dims) + u.data
    out = _ndi.map_coordinates(labels.data, coords, order=0, mode='nearest')
    return ScalarVolume(out, u.spacing)


def compose(a, b):
    """
    Composition of displacement fields, ``Phi_c = Phi_a o Phi_b``:
    ``c(x) = b(x) + a(x + b(x))`` with ``a`` interpolated trilinearly.
    Sample points leaving the grid are clamped to its faces, so the result
    is only accurate at voxels further than about ``max|b|`` from the
    boundary; composition is associative up to interpolation error there.

    **Parameters**

    a, b : DisplacementField
        Fields on the same grid.

    **Returns**

    DisplacementField
    """
    _check_same_dims(a, b)
    coords = identity_grid(b.dims) + b.data
    data = b.data + Trilinear(coords, a.dims).pull(a.data)
    return DisplacementField(data, b.spacing)


def integrate_svf(v, steps=7, return_steps=False):
    """
    Exponential of a stationary velocity field by scaling and squaring.

    ``u_0 = v / 2**steps`` and ``u_{k+1} = compose(u_k, u_k)``.
    Each squaring inherits the clamped boundary of :func:`compose`; the
    perturbed layer grows to roughly ``max|v|`` plus ``steps`` voxels.
    Inside it ``compose(integrate_svf(v), integrate_svf(-v))`` is close to
    zero and a linear ``v`` integrates to its matrix exponential.

    **Parameters**

    v : VelocityField
        Velocity in voxel units per unit time.
    steps : int
        Number of squaring steps (default 7).
    return_steps : bool
        Also return the list ``[u_0, ..., u_{steps-1}]`` of intermediate
        fields needed by :func:`integrate_svf_adjoint`.

    **Returns**

    DisplacementField, or (DisplacementField, list) if ``return_steps``.
    """
    if int(steps) != steps or steps < 1:
        raise ParameterError("steps must be an integer >= 1")
    u = DisplacementField(v.data / 2. ** steps, v.spacing)
    history = []
    for _ in range(int(steps)):
        history.append(u)
        u = compose(u, u)
    if return_steps:
        return u, history
    return u


def integrate_svf_adjoint(grad_u, history):
    """
    Back-propagate ``dL/du`` through the squaring steps of
    :func:`integrate_svf` and return ``dL/dv``.

    For ``c = compose(w, w)`` the gradient w.r.t. ``w`` collects the direct
    term, the scatter of ``dL/dc`` through the interpolation weights, and
    the derivative of the interpolated field w.r.t. the sample points.
    Interpolation weights are differentiated inside their cell; at cell
    faces the one-sided derivative of the cell above is used.

    **Parameters**

    grad_u : ndarray
        Gradient w.r.t. the integrated field, shape ``(3,) + dims``.
    history : list of DisplacementField
        Intermediate fields returned by ``integrate_svf(..., True)``.

    **Returns**

    ndarray
        Gradient w.r.t. the velocity field.
    """
    g = _np.asarray(grad_u, dtype=float)
    for w in reversed(history):
        sampler = Trilinear(identity_grid(w.dims) + w.data, w.dims)
        through_points = _np.einsum('i...,ij...->j...', g,
                                    sampler.grad(w.data))
        g = g + sampler.push(g) + through_points
    return g / 2. ** len(history)


###############################################################################
# Pyramid helpers
###############################################################################
def downsample_volume(vol, sigma=1.0):
    """Gaussian smoothing followed by taking every other voxel."""
    data = _ndi.gaussian_filter(vol.data, sigma, mode='nearest')
    spacing = tuple(2. * s for s in vol.spacing)
    return ScalarVolume(data[::2, ::2, ::2], spacing)


def subsample(data):
    """Every other voxel of a ``lead + dims`` array (no smoothing)."""
    return data[..., ::2, ::2, ::2]


def upsample_field(u, dims):
    """
    Upsample a coarse field onto a grid of shape ``dims`` twice as fine.

    The coarse node ``k`` sits on fine node ``2k``; vectors are doubled
    because they are expressed in voxel units.
    """
    coords = identity_grid(dims) / 2.
    data = 2. * Trilinear(coords, u.dims).pull(u.data)
    spacing = tuple(s / 2. for s in u.spacing)
    return type(u)(data, spacing)
