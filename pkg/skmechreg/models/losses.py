"""
Biomechanical regularisation losses, similarity terms and the composite
registration objective together with its analytic gradient.

Regularisation terms are region means of per-voxel energies:

rigidity
    sum of the squared strain eigenvalues, computed as the squared
    Frobenius norm of the strain tensor;
shearing
    rigidity energy of the displacement projected on the local interface
    normal ``n(x)``, so tangential sliding along the interface is free;
Jacobian
    squared log of the (floored) Jacobian determinant.

The composite objective is::

    total = alpha * MSE + gamma * Dice + lambda * (w_r * rigid(R)
                                                    + w_s * shear(S)
                                                    + w_j * jac(J))

where R, S and J are the regions of a regularisation mask. Regions missing
from the mask contribute nothing.
"""

import warnings as _warnings
from dataclasses import dataclass, field, asdict

import numpy as _np
import numdifftools as _ndt

from ..grid import (ScalarVolume, DisplacementField, Trilinear,
                    identity_grid, _check_same_dims)
from ..diffops import (gradient, gradient_adjoint, strain_from_gradient,
                       strain_coefficients, jacobian_coefficients, cofactor)
from ..utils import (ParameterError, DataError, ShapeError, region_mean,
                     InstabilityWarning, rng as _rng)
from .anatomy import Region

DICE_SMOOTH = 1e-5
NORMAL_TOL = 1e-6


###############################################################################
# Weights and results
###############################################################################
@dataclass
class LossWeights:
    """
    Weights of the composite objective.

    **Parameters**

    alpha : float
        Similarity (MSE) weight.
    gamma : float
        Soft Dice weight; 0 for image-only registration.
    lam : float
        Regularisation weight (``"lambda"`` in JSON documents).
    rigid, shear, jac : float
        Relative weights of the three regional terms inside the
        regulariser. They default to 1: for smooth deformations the log
        Jacobian and the strain trace agree to first order, so the terms
        are on the same scale.
    """
    alpha: float = 0.9
    gamma: float = 0.0
    lam: float = 0.1
    rigid: float = 1.0
    shear: float = 1.0
    jac: float = 1.0

    def __post_init__(self):
        for name in ('alpha', 'gamma', 'lam'):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ParameterError("{} must lie in [0, 1]".format(name))
        if abs(self.alpha + self.gamma + self.lam - 1) > 1e-9:
            raise ParameterError("alpha + gamma + lambda must equal 1")
        for name in ('rigid', 'shear', 'jac'):
            if getattr(self, name) < 0:
                raise ParameterError("term weights must be non-negative")

    @classmethod
    def from_lambda(cls, lam, **terms):
        """Image-only weights: ``alpha = 1 - lam``, ``gamma = 0``."""
        return cls(alpha=1. - lam, gamma=0., lam=lam, **terms)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if 'lambda' in d:
            d['lam'] = d.pop('lambda')
        known = {k: float(v) for k, v in d.items()
                 if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        d = asdict(self)
        d['lambda'] = d.pop('lam')
        return d


@dataclass
class LossBreakdown:
    """Value of every term of the composite objective."""
    mse: float
    dice: float
    rigid: float
    shear: float
    jac: float
    total: float
    counts: dict = field(default_factory=dict)
    clamped: int = 0

    def recompute_total(self, weights):
        return (weights.alpha * self.mse + weights.gamma * self.dice +
                weights.lam * (weights.rigid * self.rigid +
                               weights.shear * self.shear +
                               weights.jac * self.jac))

    def to_dict(self):
        return asdict(self)


###############################################################################
# Regional energies
###############################################################################
def _region(region, dims):
    region = _np.asarray(region, dtype=bool)
    if region.shape != tuple(dims):
        raise ShapeError("region shape {} does not match grid {}"
                         .format(region.shape, tuple(dims)))
    return region


def _nonempty(region):
    if not _np.any(region):
        raise ParameterError("loss region is empty")
    return region


def _strain_energy(grad, spacing, mm, weight=None):
    """Strain energy map and, when ``weight`` is given, ``dL/dgrad``."""
    S = strain_from_gradient(grad, spacing, mm)
    energy = S.frobenius2()
    if weight is None:
        return energy, None
    a = strain_coefficients(spacing, mm)
    dgrad = 2. * a[:, :, None, None, None] * S.full() * weight
    return energy, dgrad


def _project_field(v, n):
    # v and n have a leading component axis; n may be zero off-region
    nn = _np.sum(n * n, axis=0)
    coef = _np.sum(v * n, axis=0) / _np.where(nn > 0, nn, 1.)
    proj = coef * n
    return proj, v - proj


def _projected_gradient(grad, n, residual):
    out = _np.empty_like(grad)
    for j in range(3):
        proj, rest = _project_field(grad[:, j], n)
        out[:, j] = rest if residual else proj
    return out


def _log_det_terms(grad, spacing, mm, eps, weight=None):
    base, scale = jacobian_coefficients(spacing, mm)
    J = scale[:, :, None, None, None] * grad
    for i in range(3):
        J[i, i] += base[i]
    det = _np.linalg.det(_np.moveaxis(J, (0, 1), (-2, -1)))
    clamped = det <= eps
    logd = _np.log(_np.maximum(det, eps))
    if weight is None:
        return logd ** 2, clamped, None
    factor = _np.where(clamped, 0., 2. * logd / _np.where(clamped, 1., det))
    dgrad = scale[:, :, None, None, None] * cofactor(J) * factor * weight
    return logd ** 2, clamped, dgrad


def rigidity_loss(u, region, mm=False):
    """
    Local rigidity loss: mean over ``region`` of ``sum_i lambda_i(x)**2``
    where ``lambda_i`` are the eigenvalues of the strain tensor.

    **Parameters**

    u : DisplacementField
    region : ndarray of bool
        Voxels where the loss applies (non-empty).
    mm : bool
        Use the millimetre form of the strain tensor.

    **Returns**

    value : float
    energy : ndarray
        Per-voxel energy, zero outside the region.
    """
    region = _nonempty(_region(region, u.dims))
    energy, _ = _strain_energy(gradient(u), u.spacing, mm)
    return region_mean(energy, region), _np.where(region, energy, 0.)


def project(u_vec, n):
    """
    Orthogonal projection of ``u_vec`` on the line spanned by ``n``.

    **Parameters**

    u_vec : array_like
        Vector(s) with a leading axis of size 3.
    n : array_like
        Direction(s), same shape; must be non-zero.

    **Returns**

    projection : ndarray
    residual : ndarray
        ``u_vec - projection``, orthogonal to ``n``.
    """
    u_vec = _np.asarray(u_vec, dtype=float)
    n = _np.asarray(n, dtype=float)
    if _np.any(_np.sum(n * n, axis=0) == 0):
        raise ParameterError("cannot project on a zero vector")
    return _project_field(u_vec, n)


def _check_normals(n, region):
    lengths = _np.sqrt(_np.sum(n * n, axis=0))
    if _np.any(_np.abs(lengths[region] - 1.) > NORMAL_TOL):
        raise DataError("normals must be unit vectors on the shear region")


def shearing_loss(u, region, normals, mm=False, residual=False):
    """
    Shearing loss: rigidity energy of the displacement projected on the
    interface normal.

    At each region voxel ``x`` the displacements of ``x`` and of its six
    neighbours are projected on ``n(x)``; the strain of the projected
    vectors is taken with the same differences as :func:`rigidity_loss`.

    **Parameters**

    u : DisplacementField
    region : ndarray of bool
    normals : DirectionField or ndarray
        Unit normals on the region, shape ``(3,) + dims``.
    mm : bool
    residual : bool
        Penalise the tangential part ``u - u^n`` instead.

    **Returns**

    value : float
    energy : ndarray
    """
    region = _nonempty(_region(region, u.dims))
    n = _np.asarray(getattr(normals, 'data', normals), dtype=float)
    if n.shape != u.data.shape:
        raise ShapeError("normals must have the shape of the field")
    _check_normals(n, region)
    grad = _projected_gradient(gradient(u), n, residual)
    energy, _ = _strain_energy(grad, u.spacing, mm)
    return region_mean(energy, region), _np.where(region, energy, 0.)


def jacobian_loss(u, region, eps=1e-6, mm=False):
    """
    Pseudo-elastic loss: mean over ``region`` of
    ``log(max(det J(x), eps))**2``.

    **Returns**

    value : float
    energy : ndarray
    """
    if not eps > 0:
        raise ParameterError("eps must be strictly positive")
    region = _nonempty(_region(region, u.dims))
    energy, _, _ = _log_det_terms(gradient(u), u.spacing, mm, eps)
    return region_mean(energy, region), _np.where(region, energy, 0.)


###############################################################################
# Similarity terms
###############################################################################
def mse_loss(fixed, warped):
    """Mean squared intensity difference over the whole grid."""
    _check_same_dims(fixed, warped)
    return region_mean((fixed.data - warped.data) ** 2)


def _label_ids(*label_maps):
    ids = set()
    for labels in label_maps:
        ids.update(int(v) for v in _np.unique(labels))
    ids.discard(0)
    return sorted(ids)


def warp_onehot(moving_labels, u, label_ids=None):
    """
    Trilinearly warped one-hot channels of a label map.

    **Returns**

    dict
        ``{label_id: ndarray}`` of soft memberships in [0, 1].
    """
    _check_same_dims(moving_labels, u)
    if label_ids is None:
        label_ids = _label_ids(moving_labels.data)
    sampler = Trilinear(identity_grid(u.dims) + u.data, moving_labels.dims)
    onehot = _np.stack([moving_labels.data == l for l in label_ids])
    warped = sampler.pull(onehot.astype(float))
    return {l: warped[k] for k, l in enumerate(label_ids)}


def _soft_dice(p, q, smooth=DICE_SMOOTH):
    axes = tuple(range(1, p.ndim))
    inter = _np.sum(p * q, axis=axes)
    den = _np.sum(p, axis=axes) + _np.sum(q, axis=axes) + smooth
    num = 2. * inter + smooth
    loss = 1. - float(_np.mean(num / den))
    shape = (-1,) + (1,) * (p.ndim - 1)
    dq = -(2. * p * den.reshape(shape) - num.reshape(shape)) / \
        den.reshape(shape) ** 2 / p.shape[0]
    return loss, dq


def soft_dice_loss(fixed_labels, warped_onehot):
    """
    Soft Dice loss, ``1 - mean_l (2 sum p q + s) / (sum p + sum q + s)``,
    averaged over the non-background labels.

    **Parameters**

    fixed_labels : ScalarVolume
        Label map of the fixed image.
    warped_onehot : dict
        ``{label_id: ndarray or ScalarVolume}`` soft channels of the warped
        moving labels, see :func:`warp_onehot`.

    **Returns**

    float
    """
    present = set(_label_ids(fixed_labels.data))
    ids = sorted(l for l in warped_onehot if l != 0)
    if not present.intersection(ids):
        raise DataError("fixed and warped labels have no label in common")
    p = _np.stack([fixed_labels.data == l for l in ids]).astype(float)
    q = _np.stack([_np.asarray(getattr(warped_onehot[l], 'data',
                                       warped_onehot[l]), dtype=float)
                   for l in ids])
    return _soft_dice(p, q)[0]


###############################################################################
# Composite objective
###############################################################################
def _regions(mask, dims):
    if mask is None:
        return {Region.R: _np.zeros(dims, bool),
                Region.S: _np.zeros(dims, bool),
                Region.J: _np.ones(dims, bool)}
    if tuple(mask.dims) != tuple(dims):
        raise ShapeError("mask shape does not match the field")
    return {r: mask.region(r) for r in Region}


def loss_and_gradient(fixed, moving, u, mask=None, normals=None,
                      weights=None, labels=None, eps=1e-6, mm=False,
                      residual=False, need_grad=True, warn=True):
    """
    Composite objective and its gradient with respect to ``u``.

    **Parameters**

    fixed, moving : ScalarVolume
    u : DisplacementField
    mask : RegMask, optional
        Regularisation mask; everything is J when omitted.
    normals : DirectionField or ndarray, optional
        Unit normals on the S region (required when S is non-empty).
    weights : LossWeights, optional
    labels : tuple of ScalarVolume, optional
        ``(fixed_labels, moving_labels)``; required when ``gamma > 0``.
    eps : float
        Floor of the Jacobian determinant.
    mm : bool
        Millimetre forms of the strain and Jacobian.
    residual : bool
        Residual variant of the shearing loss.
    need_grad : bool
        Skip the gradient computation when False.
    warn : bool
        Issue an ``InstabilityWarning`` when J voxels have a determinant
        at or below ``eps`` (their Jacobian term is floored and gets no
        gradient). The count is always in ``LossBreakdown.clamped``.

    **Returns**

    breakdown : LossBreakdown
    grad : ndarray or None
        ``d total / d u``, shape ``(3,) + dims``.
    """
    _check_same_dims(fixed, moving, u)
    if weights is None:
        weights = LossWeights()
    if not eps > 0:
        raise ParameterError("eps must be strictly positive")
    dims = u.dims
    sampler = Trilinear(identity_grid(dims) + u.data, moving.dims)
    diff = sampler.pull(moving.data) - fixed.data
    mse = region_mean(diff ** 2)
    grad_u = _np.zeros(u.data.shape) if need_grad else None
    if need_grad and weights.alpha:
        grad_u += (weights.alpha * 2. / diff.size) * diff * \
            sampler.grad(moving.data)

    dice = 0.
    if labels is not None:
        fixed_labels, moving_labels = labels
        _check_same_dims(fixed_labels, moving_labels, u)
        ids = _label_ids(fixed_labels.data, moving_labels.data)
        if not set(_label_ids(fixed_labels.data)).intersection(
                _label_ids(moving_labels.data)):
            raise DataError("fixed and moving labels have no label in "
                            "common")
        onehot = _np.stack([moving_labels.data == l
                            for l in ids]).astype(float)
        p = _np.stack([fixed_labels.data == l for l in ids]).astype(float)
        dice, dq = _soft_dice(p, sampler.pull(onehot))
        if need_grad and weights.gamma:
            grad_u += weights.gamma * _np.einsum(
                'l...,lk...->k...', dq, sampler.grad(onehot))
    elif weights.gamma > 0:
        raise ParameterError("a Dice weight needs fixed and moving labels")

    regions = _regions(mask, dims)
    counts = {r.name: int(_np.count_nonzero(regions[r])) for r in Region}
    grad = gradient(u)
    dgrad = _np.zeros(grad.shape) if need_grad else None
    lam = weights.lam

    def weight_of(region, term_weight):
        if not need_grad or lam == 0 or term_weight == 0:
            return None
        return region * (lam * term_weight / _np.count_nonzero(region))

    rigid = shear = jac = 0.
    clamped = 0
    R, S, J = regions[Region.R], regions[Region.S], regions[Region.J]
    if _np.any(R):
        w = weight_of(R, weights.rigid)
        energy, dg = _strain_energy(grad, u.spacing, mm, w)
        rigid = region_mean(energy, R)
        if dg is not None:
            dgrad += dg
    if _np.any(S):
        if normals is None:
            raise DataError("a shear region needs a normal field")
        n = _np.asarray(getattr(normals, 'data', normals), dtype=float)
        if n.shape != u.data.shape:
            raise ShapeError("normals must have the shape of the field")
        _check_normals(n, S)
        w = weight_of(S, weights.shear)
        energy, dg = _strain_energy(_projected_gradient(grad, n, residual),
                                    u.spacing, mm, w)
        shear = region_mean(energy, S)
        if dg is not None:
            dgrad += _projected_gradient(dg, n, residual)
    if _np.any(J):
        w = weight_of(J, weights.jac)
        energy, low, dg = _log_det_terms(grad, u.spacing, mm, eps, w)
        jac = region_mean(energy, J)
        clamped = int(_np.count_nonzero(low & J))
        if dg is not None:
            dgrad += dg
        if clamped and warn:
            _warnings.warn("{} voxels of the J region have det J <= {:g}"
                           .format(clamped, eps), InstabilityWarning)

    total = (weights.alpha * mse + weights.gamma * dice +
             lam * (weights.rigid * rigid + weights.shear * shear +
                    weights.jac * jac))
    breakdown = LossBreakdown(mse=mse, dice=dice, rigid=rigid, shear=shear,
                              jac=jac, total=total, counts=counts,
                              clamped=clamped)
    if need_grad:
        grad_u += gradient_adjoint(dgrad)
    return breakdown, grad_u


def composite_loss(fixed, moving, u, mask=None, normals=None, weights=None,
                   labels=None, eps=1e-6, mm=False, residual=False):
    """
    Evaluate the composite objective; see :func:`loss_and_gradient`.

    **Returns**

    LossBreakdown
    """
    return loss_and_gradient(fixed, moving, u, mask, normals, weights,
                             labels, eps, mm, residual, need_grad=False)[0]


def composite_gradient(fixed, moving, u, mask=None, normals=None,
                       weights=None, labels=None, eps=1e-6, mm=False,
                       residual=False):
    """
    Analytic gradient of the composite objective with respect to ``u``.

    **Returns**

    DisplacementField
    """
    grad = loss_and_gradient(fixed, moving, u, mask, normals, weights,
                             labels, eps, mm, residual)[1]
    return DisplacementField(grad, u.spacing)


###############################################################################
# Gradient verification
###############################################################################
def check_gradient(fun, grad, x, n_directions=50, step=1e-4, seed=0):
    """
    Compare an analytic gradient with numerical directional derivatives.

    Directional derivatives of ``fun`` along random unit directions are
    estimated with ``numdifftools.Derivative`` (central differences) and
    compared with the projection of ``grad(x)`` on the same directions.

    **Parameters**

    fun : callable
        ``fun(x) -> float``.
    grad : callable
        ``grad(x) -> ndarray`` with the shape of ``x``.
    x : ndarray
        Point of evaluation.
    n_directions : int
        Number of random directions (default 50).
    step : float
        Finite difference step along each direction.
    seed : int
        Seed of the direction generator.

    **Returns**

    ndarray
        Relative error of every direction.
    """
    x = _np.asarray(x, dtype=float)
    g = _np.asarray(grad(x), dtype=float)
    gen = _rng(seed, 'losses/check_gradient')
    errors = _np.empty(n_directions)
    for k in range(n_directions):
        d = gen.standard_normal(x.shape)
        d /= _np.linalg.norm(d)
        analytic = float(_np.vdot(g, d))
        derivative = _ndt.Derivative(lambda t: fun(x + t * d), step=step,
                                     method='central')
        numeric = float(derivative(0.))
        scale = max(abs(numeric), abs(analytic), _np.finfo(float).tiny)
        errors[k] = abs(numeric - analytic) / scale
    return errors
