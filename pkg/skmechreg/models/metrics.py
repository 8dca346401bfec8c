"""
Evaluation metrics of a registration and their aggregation into tables.
"""

from dataclasses import dataclass, field, asdict

import numpy as _np
import pandas as _pd
from scipy import stats as _st

from ..grid import warp, warp_labels, _check_same_dims
from ..diffops import jacobian, log_det
from ..utils import region_mean, region_std
from .anatomy import Region
from .losses import rigidity_loss

METRIC_COLUMNS = ('mse', 'dice_mean', 'foldings_pct', 'sdlog_j',
                  'sdlog_j_masked', 'l_rigid', 'jump_recovery', 'runtime')


@dataclass
class MetricsReport:
    """
    Metrics of one registration. Metrics that do not apply (no labels, no
    rigid region, no interface) are None.
    """
    mse: float
    foldings_pct: float
    sdlog_j: float
    sdlog_j_masked: float = None
    l_rigid: float = None
    dice: dict = field(default_factory=dict)
    jump_recovery: float = None
    runtime: float = 0.

    @property
    def dice_mean(self):
        if not self.dice:
            return None
        return float(_np.mean(list(self.dice.values())))

    def to_dict(self):
        d = asdict(self)
        d['dice_mean'] = self.dice_mean
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_row(self):
        """Flat ``{column: value}`` mapping, one Dice column per label."""
        row = {c: getattr(self, c) for c in METRIC_COLUMNS}
        for label, value in sorted(self.dice.items()):
            row['dice_{}'.format(label)] = value
        return row


###############################################################################
# Field metrics
###############################################################################
def foldings_pct(u, mm=False):
    """
    Percentage of voxels where the Jacobian determinant is not positive.

    **Parameters**

    u : DisplacementField
    mm : bool

    **Returns**

    float
    """
    det = jacobian(u, mm).det()
    return 100. * _np.count_nonzero(det <= 0) / det.size


def sdlog_j(u, region=None, eps=1e-6, mm=False):
    """
    Population standard deviation of ``log(max(det J, eps))`` over
    ``region`` (the whole grid when omitted).
    """
    values = log_det(jacobian(u, mm), eps).data
    return region_std(values, region)


def l_rigid(u, region, mm=False):
    """
    Mean rigidity energy over ``region``; the rigidity loss reported as a
    metric.
    """
    return rigidity_loss(u, region, mm)[0]


def jump_recovery(u, sample, offset=3):
    """
    Fraction of the ground-truth sliding jump recovered by ``u``.

    The tangential component of ``u`` is averaged on the layer ``offset``
    voxels before the interface (first cuboid) and on the layer
    ``offset - 1`` voxels after it (second cuboid), over the footprint
    shared by both cuboids. The difference of the two averages is divided
    by the ground-truth jump ``(t_a - t_b) . tangent``.

    **Parameters**

    u : DisplacementField
    sample : ShearSample
    offset : int
        Distance of the sampled layers to the interface; 3 keeps them just
        outside the default interface band.

    **Returns**

    float
    """
    gt = sample.gt
    tangent = _np.asarray(gt['tangent'], dtype=float)
    expected = float(_np.dot(_np.asarray(gt['t_a']) - _np.asarray(gt['t_b']),
                             tangent))
    if expected == 0:
        return None
    p = int(gt['position'])
    labels = sample.fixed_labels.data
    xa, xb = p - offset, p + offset - 1
    if xa < 0 or xb >= labels.shape[0]:
        return None
    footprint = (labels[xa] == 1) & (labels[xb] == 2)
    if not _np.any(footprint):
        return None
    along = _np.einsum('i,i...->...', tangent, u.data)
    jump = region_mean(along[xa], footprint) - \
        region_mean(along[xb], footprint)
    return jump / expected


def dice_scores(fixed_labels, warped_labels):
    """Hard Dice score of every non-background label."""
    a = fixed_labels.data.astype(int)
    b = warped_labels.data.astype(int)
    ids = sorted(set(_np.unique(a)) | set(_np.unique(b)))
    out = {}
    for label in ids:
        if label == 0:
            continue
        pa, pb = a == label, b == label
        denom = _np.count_nonzero(pa) + _np.count_nonzero(pb)
        out[str(label)] = 2. * _np.count_nonzero(pa & pb) / denom
    return out


###############################################################################
# Reports
###############################################################################
def evaluate(fixed, moving, u, mask=None, labels=None, eps=1e-6, mm=False):
    """
    Metrics of a registration.

    **Parameters**

    fixed, moving : ScalarVolume
    u : DisplacementField
    mask : RegMask, optional
        Rigidity is measured over its R region and the masked SDlog|J|
        over R + J.
    labels : tuple of ScalarVolume, optional
        ``(fixed_labels, moving_labels)``; the moving labels are warped with
        nearest-neighbour sampling for the Dice scores.
    eps : float
    mm : bool

    **Returns**

    MetricsReport
    """
    _check_same_dims(fixed, moving, u)
    warped = warp(moving, u)
    mse = region_mean((warped.data - fixed.data) ** 2)
    report = MetricsReport(mse=mse, foldings_pct=foldings_pct(u, mm),
                           sdlog_j=sdlog_j(u, None, eps, mm))
    if mask is not None:
        outside = ~mask.region(Region.S)
        if _np.any(outside):
            report.sdlog_j_masked = sdlog_j(u, outside, eps, mm)
        rigid = mask.region(Region.R)
        if _np.any(rigid):
            report.l_rigid = l_rigid(u, rigid, mm)
    if labels is not None:
        fixed_labels, moving_labels = labels
        report.dice = dice_scores(fixed_labels, warp_labels(moving_labels, u))
    return report


def evaluate_sample(sample, u, mask=None, eps=1e-6, mm=False):
    """
    :func:`evaluate` on a synthetic sample, with its own mask and labels;
    shear samples also get :func:`jump_recovery`.
    """
    report = evaluate(sample.fixed, sample.moving, u,
                      sample.mask if mask is None else mask, sample.labels,
                      eps, mm)
    if sample.kind == 'shear':
        report.jump_recovery = jump_recovery(u, sample)
    return report


###############################################################################
# Tables
###############################################################################
def _pstd(values):
    values = _np.asarray(values.dropna(), dtype=float)
    return float(_np.std(values)) if values.size else _np.nan


def aggregate(rows, by=('configuration',), columns=None):
    """
    Mean and (population) standard deviation of the metric columns.

    **Parameters**

    rows : pandas.DataFrame or list of dict
        One row per registration, e.g. the output of
        :func:`skmechreg.models.solver.sweep` or ``report.to_row()``.
    by : sequence of str
        Grouping columns.
    columns : sequence of str, optional
        Metric columns; all numeric metric columns present by default.

    **Returns**

    pandas.DataFrame
        ``<metric>_mean`` and ``<metric>_std`` columns plus ``n``.
    """
    frame = _pd.DataFrame(rows)
    if 'status' in frame:
        frame = frame[frame['status'] == 'ok']
    by = list(by)
    if columns is None:
        columns = [c for c in frame.columns
                   if c in METRIC_COLUMNS or c.startswith('dice_')]
    columns = [c for c in columns if c not in by]
    values = frame[columns].apply(_pd.to_numeric, errors='coerce')
    grouped = values.groupby([frame[c] for c in by], sort=False)
    stats = grouped.agg(['mean', _pstd])
    stats.columns = ['{}_{}'.format(c, 'std' if s == '_pstd' else s)
                     for c, s in stats.columns]
    stats['n'] = grouped.size()
    return stats.reset_index()


def front(rows, x='lambda', metrics=('mse', 'sdlog_j', 'l_rigid'),
          by=('configuration',)):
    """
    Trade-off front of a sweep: per-``x`` means of the metrics and their
    Spearman correlation with ``x``.

    **Returns**

    table : pandas.DataFrame
        Means per ``(by, x)``.
    correlations : dict
        ``{(group, metric): rho}``; a single group is keyed by the metric
        alone.
    """
    frame = _pd.DataFrame(rows)
    if 'status' in frame:
        frame = frame[frame['status'] == 'ok']
    frame = frame.copy()
    by = [c for c in by if c in frame]
    metrics = [m for m in metrics if m in frame]
    frame[metrics] = frame[metrics].apply(_pd.to_numeric, errors='coerce')
    table = frame.groupby(by + [x], sort=True)[metrics].mean().reset_index()
    correlations = {}
    groups = table.groupby(by, sort=True) if by else [((), table)]
    single = by == [] or table[by].drop_duplicates().shape[0] == 1
    for key, group in groups:
        for metric in metrics:
            data = group[[x, metric]].dropna()
            if len(data) < 2:
                continue
            rho = _st.spearmanr(data[x], data[metric])[0]
            correlations[metric if single else (key, metric)] = float(rho)
    return table, correlations
