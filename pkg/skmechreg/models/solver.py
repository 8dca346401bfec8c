"""
Iterative registration: minimise the composite objective over a
displacement field (or a stationary velocity field) with Adam, coarse to
fine, and sweep the loss weights over datasets.
"""

import concurrent.futures as _futures
import logging as _logging
import time as _time
import warnings as _warnings
from dataclasses import dataclass, field, asdict

import numpy as _np
import pandas as _pd

from ..grid import (DisplacementField, VelocityField, ScalarVolume,
                    integrate_svf, integrate_svf_adjoint, downsample_volume,
                    subsample, upsample_field, _check_same_dims)
from ..utils import (ParameterError, ConfigError, NumericalError,
                     InstabilityWarning)
from .anatomy import RegMask, DirectionField, Region, restrict_mask, \
    CONFIGURATIONS
from .losses import LossWeights, loss_and_gradient
from .metrics import evaluate_sample

logger = _logging.getLogger(__name__)

PARAMETRIZATIONS = ('displacement', 'svf')


###############################################################################
# Configuration and results
###############################################################################
@dataclass
class SolverConfig:
    """
    Settings of :func:`register`.

    **Parameters**

    parametrization : {'displacement', 'svf'}
        Optimise the displacement directly, or a stationary velocity field
        integrated with ``steps`` squaring steps.
    steps : int
        Scaling and squaring steps (default 7).
    iters : int
        Maximum Adam iterations per resolution level (default 300).
    lr : float
        Adam learning rate (default 1e-2).
    betas : (float, float)
        Adam moment decay rates.
    eps : float
        Adam denominator offset.
    weights : LossWeights
    levels : int
        Resolution levels; each coarser level halves the grid (default 2).
    tol : float
        Stop when the best total loss improved by less than ``tol``
        (relative) over the last ``patience`` iterations.
    patience : int
    grad_tol : float
        Stop when the largest gradient component is at most ``grad_tol``.
    seed : int
        Experiment seed, copied into the :class:`SolveTrace` and the sweep
        rows. Fields start at zero, so the solver itself draws nothing.
    mm : bool
        Millimetre forms of the strain and Jacobian.
    eps_jac : float
        Floor of the Jacobian determinant.
    residual : bool
        Residual variant of the shearing loss.
    """
    parametrization: str = 'displacement'
    steps: int = 7
    iters: int = 300
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    levels: int = 2
    tol: float = 1e-6
    patience: int = 20
    grad_tol: float = 0.
    seed: int = 0
    mm: bool = False
    eps_jac: float = 1e-6
    residual: bool = False

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if self.parametrization not in PARAMETRIZATIONS:
            raise ParameterError("parametrization must be one of {}"
                                 .format(PARAMETRIZATIONS))
        if self.iters < 1:
            raise ParameterError("iters must be >= 1")
        if not self.lr > 0:
            raise ParameterError("lr must be > 0")
        if self.levels < 1:
            raise ParameterError("levels must be >= 1")
        if self.steps < 1:
            raise ParameterError("steps must be >= 1")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ParameterError("betas must be two values in [0, 1)")
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")

    @classmethod
    def from_dict(cls, d):
        """Build from a JSON document; unknown keys are ignored."""
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**known)
        except (TypeError, ValueError) as err:
            raise ConfigError("invalid solver config: {}".format(err))

    def to_dict(self):
        d = asdict(self)
        d['weights'] = self.weights.to_dict()
        d['betas'] = list(self.betas)
        return d


@dataclass
class SolveTrace:
    """
    Record of a registration.

    ``entries`` holds one loss breakdown per iteration (all levels, with
    ``level`` and ``iteration`` keys); ``best`` is the total loss of the
    returned iterate at the finest level. ``seed`` is the experiment seed of
    the solver settings.
    """
    entries: list = field(default_factory=list)
    wall_time: float = 0.
    field: object = None
    converged: bool = False
    best: float = _np.inf
    best_iteration: int = 0
    seed: int = 0

    def to_dict(self):
        return {'entries': self.entries, 'converged': self.converged,
                'best': self.best, 'best_iteration': self.best_iteration,
                'seed': self.seed}

    def to_frame(self):
        rows = []
        for entry in self.entries:
            row = {k: v for k, v in entry.items() if k != 'counts'}
            rows.append(row)
        return _pd.DataFrame(rows)


class Adam:
    """
    Adam update with bias correction folded into the step size.

    **Parameters**

    shape : tuple
        Shape of the parameter array.
    lr : float
    beta_1, beta_2 : float
        Decay rates of the first and second moment averages.
    epsilon : float
    """

    def __init__(self, shape, lr, beta_1=0.9, beta_2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.m = _np.zeros(shape)
        self.v = _np.zeros(shape)
        self.beta_1_t = 1.
        self.beta_2_t = 1.

    def step(self, params, grad):
        """Return the updated parameters."""
        self.beta_1_t *= self.beta_1
        self.beta_2_t *= self.beta_2
        lr_t = self.lr * _np.sqrt(1 - self.beta_2_t) / (1 - self.beta_1_t)
        self.m = self.beta_1 * self.m + (1 - self.beta_1) * grad
        self.v = self.beta_2 * self.v + (1 - self.beta_2) * grad ** 2
        return params - lr_t * self.m / (_np.sqrt(self.v) + self.epsilon)


###############################################################################
# Registration
###############################################################################
def _pyramid(fixed, moving, labels, mask, normals, levels):
    """Inputs of every level, finest first."""
    out = [(fixed, moving, labels, mask, normals)]
    for _ in range(levels - 1):
        fixed = downsample_volume(fixed)
        moving = downsample_volume(moving)
        if labels is not None:
            labels = tuple(ScalarVolume(subsample(l.data), fixed.spacing)
                           for l in labels)
        if mask is not None:
            mask = RegMask(subsample(mask.labels), fixed.spacing,
                           mask.provenance)
        if normals is not None:
            normals = DirectionField(subsample(normals.data), fixed.spacing)
        if min(fixed.dims) < 3:
            raise ParameterError("too many levels for a grid of {}"
                                 .format(out[0][0].dims))
        out.append((fixed, moving, labels, mask, normals))
    return out


def _field(params, spacing, cfg):
    if cfg.parametrization == 'svf':
        return integrate_svf(VelocityField(params, spacing), cfg.steps,
                             return_steps=True)
    return DisplacementField(params, spacing), None


def _solve_level(params, inputs, cfg, level, trace):
    fixed, moving, labels, mask, normals = inputs
    adam = Adam(params.shape, cfg.lr, cfg.betas[0], cfg.betas[1], cfg.eps)
    best_total, best_params, best_iteration = _np.inf, params, 0
    history = []
    converged = False
    clamped = 0
    for it in range(cfg.iters):
        u, steps = _field(params, fixed.spacing, cfg)
        breakdown, grad = loss_and_gradient(
            fixed, moving, u, mask, normals, cfg.weights, labels,
            cfg.eps_jac, cfg.mm, cfg.residual, warn=False)
        clamped = max(clamped, breakdown.clamped)
        if not _np.isfinite(breakdown.total) or \
                not _np.all(_np.isfinite(grad)):
            raise NumericalError("non-finite loss at level {}, iteration {} "
                                 "(total={})".format(level, it,
                                                     breakdown.total))
        if steps is not None:
            grad = integrate_svf_adjoint(grad, steps)
        entry = breakdown.to_dict()
        entry.update(level=level, iteration=it)
        trace.entries.append(entry)
        if breakdown.total < best_total:
            best_total, best_params, best_iteration = \
                breakdown.total, params, it
        history.append(best_total)
        if _np.max(_np.abs(grad)) <= cfg.grad_tol:
            converged = True
            break
        if len(history) > cfg.patience:
            before = history[-cfg.patience - 1]
            if before - best_total <= cfg.tol * abs(before):
                converged = True
                break
        params = adam.step(params, grad)
        if not _np.all(_np.isfinite(params)):
            raise NumericalError("non-finite parameters at level {}, "
                                 "iteration {}".format(level, it))
        if it % 50 == 0:
            logger.debug("level %d iteration %d total %.6g", level, it,
                         breakdown.total)
    logger.info("level %d: best total %.6g at iteration %d", level,
                best_total, best_iteration)
    if clamped:
        _warnings.warn("level {}: up to {} voxels had a Jacobian determinant "
                       "at the floor".format(level, clamped),
                       InstabilityWarning)
    return best_params, best_total, best_iteration, converged


def register(fixed, moving, labels=None, mask=None, normals=None, cfg=None):
    """
    Register ``moving`` onto ``fixed``.

    Parameters start at zero on the coarsest level. Each level runs Adam on
    the composite objective, keeps its best iterate and hands it, upsampled,
    to the next finer level. In ``'svf'`` mode the displacement is the
    scaling and squaring integral of the optimised velocity and the
    gradient is back-propagated through the squaring steps.

    **Parameters**

    fixed, moving : ScalarVolume
    labels : tuple of ScalarVolume, optional
        ``(fixed_labels, moving_labels)`` for the Dice term.
    mask : RegMask, optional
    normals : DirectionField, optional
    cfg : SolverConfig, optional

    **Returns**

    u : DisplacementField
        The displacement at the best iterate of the finest level.
    trace : SolveTrace
    """
    if cfg is None:
        cfg = SolverConfig()
    _check_same_dims(fixed, moving)
    start = _time.perf_counter()
    trace = SolveTrace(seed=cfg.seed)
    levels = _pyramid(fixed, moving, labels, mask, normals, cfg.levels)
    params = _np.zeros((3,) + levels[-1][0].dims)
    for level in range(len(levels) - 1, -1, -1):
        inputs = levels[level]
        if params.shape[1:] != inputs[0].dims:
            kind = VelocityField if cfg.parametrization == 'svf' \
                else DisplacementField
            coarse = kind(params, levels[level + 1][0].spacing)
            params = upsample_field(coarse, inputs[0].dims).data
        params, best, best_iteration, converged = _solve_level(
            params, inputs, cfg, level, trace)
    u, _ = _field(params, fixed.spacing, cfg)
    trace.field = u
    trace.best = best
    trace.best_iteration = best_iteration
    trace.converged = converged
    trace.wall_time = _time.perf_counter() - start
    return u, trace


###############################################################################
# Sweeps
###############################################################################
def lambda_grid(n=13, alpha_max=0.99, alpha_min=0.01):
    """
    Image-only weights with ``alpha`` evenly spaced from ``alpha_max`` down
    to ``alpha_min`` and ``lambda = 1 - alpha``.
    """
    if n < 1:
        raise ParameterError("the grid needs at least one value")
    alphas = _np.linspace(alpha_max, alpha_min, n)
    return [LossWeights.from_lambda(float(round(1. - a, 12))) for a in alphas]


def triplet_grid(alphas=(0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3), step=0.1,
                 minimum=0.1):
    """
    ``(alpha, gamma, lambda)`` weights for label-guided registration:
    for every ``alpha``, ``gamma`` and ``lambda`` take values on a grid of
    ``step`` that are at least ``minimum`` and sum to ``1 - alpha``.
    """
    out = []
    for alpha in alphas:
        rest = round(1. - alpha, 12)
        n = int(round(rest / step))
        for k in range(n + 1):
            gamma = round(k * step, 12)
            lam = round(rest - gamma, 12)
            if gamma >= minimum - 1e-12 and lam >= minimum - 1e-12:
                out.append(LossWeights(alpha=alpha, gamma=gamma, lam=lam))
    return out


def _run_cell(sample, configuration, weights, cfg, normals):
    mask = restrict_mask(sample.mask, configuration)
    cell_cfg = SolverConfig.from_dict(dict(cfg.to_dict(),
                                           weights=weights.to_dict()))
    use_normals = normals if _np.any(mask.region(Region.S)) else None
    labels = sample.labels if weights.gamma > 0 else None
    u, trace = register(sample.fixed, sample.moving, labels, mask,
                        use_normals, cell_cfg)
    report = evaluate_sample(sample, u, eps=cfg.eps_jac, mm=cfg.mm)
    report.runtime = trace.wall_time
    return report, trace


def _cell_row(sample, configuration, weights):
    return {'kind': sample.kind, 'split': sample.split,
            'index': sample.index, 'configuration': configuration,
            'alpha': weights.alpha, 'gamma': weights.gamma,
            'lambda': weights.lam}


def _safe_cell(args):
    sample, configuration, weights, cfg, normals, name = args
    row = _cell_row(sample, name, weights)
    row['seed'] = cfg.seed
    try:
        report, trace = _run_cell(sample, configuration, weights, cfg,
                                  normals)
    except (ValueError, ArithmeticError) as err:
        row.update(status='failed', error='{}: {}'.format(
            type(err).__name__, err))
        return row
    row.update(report.to_row())
    row.update(status='ok', error='', iterations=len(trace.entries),
               converged=trace.converged)
    return row


def sweep(samples, grid, cfg=None, configurations=CONFIGURATIONS,
          workers=1, baselines=False):
    """
    Register every sample with every weight setting and configuration.

    **Parameters**

    samples : iterable
        Synthetic samples (see :mod:`skmechreg.datasets.synthetic`).
    grid : list of LossWeights
        Weight settings, e.g. :func:`lambda_grid` or :func:`triplet_grid`.
    cfg : SolverConfig, optional
        Template; its weights are replaced by each grid entry.
    configurations : sequence of str
        Masks derived with :func:`skmechreg.models.anatomy.restrict_mask`.
    workers : int
        Worker processes; cells are independent.
    baselines : bool
        Also evaluate the unregistered pair (``'before'`` rows) and a
        registration without regulariser (``'unregularised'`` rows).

    **Returns**

    pandas.DataFrame
        One row per cell, in grid order, with the metrics of
        :class:`~skmechreg.models.metrics.MetricsReport` and a ``status``
        column. Failed cells are kept with their error message.
    """
    if cfg is None:
        cfg = SolverConfig()
    samples = list(samples)
    grid = list(grid)
    if not samples or not grid:
        raise ParameterError("a sweep needs samples and weights")
    for configuration in configurations:
        if configuration not in CONFIGURATIONS:
            raise ParameterError("unknown configuration {!r}"
                                 .format(configuration))
    tasks = []
    rows = []
    for sample in samples:
        normals = None
        if 'rigid_shear_jacobian' in configurations and \
                _np.any(sample.mask.region(Region.S)):
            normals = sample.normals()
        if baselines:
            zero = DisplacementField.zeros(sample.dims, sample.fixed.spacing)
            row = _cell_row(sample, 'before', LossWeights(1., 0., 0.))
            row['seed'] = cfg.seed
            row.update(evaluate_sample(sample, zero, eps=cfg.eps_jac,
                                       mm=cfg.mm).to_row())
            row.update(status='ok', error='')
            rows.append(row)
            tasks.append((sample, 'jacobian', LossWeights(1., 0., 0.), cfg,
                          None, 'unregularised'))
        for weights in grid:
            for configuration in configurations:
                tasks.append((sample, configuration, weights, cfg, normals,
                              configuration))
    if workers > 1:
        with _futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_cell, tasks))
    else:
        results = [_safe_cell(task) for task in tasks]
    for row in results:
        if row['status'] != 'ok':
            logger.warning("cell %s failed: %s", row, row['error'])
    frame = _pd.DataFrame(rows + results)
    logger.info("sweep done: %d cells, %d failed", len(frame),
                int((frame['status'] != 'ok').sum()))
    return frame
