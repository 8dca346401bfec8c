"""
Regularisation masks and interface normals derived from label maps.

A regularisation mask assigns every voxel one of three regions:

* ``R``: rigid structures (bones), regularised with the rigidity loss;
* ``S``: sliding interfaces between organs, regularised with the shearing
  loss along the local interface normal;
* ``J``: everything else, regularised with the Jacobian loss.

Rigid structures and interface pairs are given by an :class:`AnatomyConfig`;
shipped configurations are available in :mod:`skmechreg.datasets`.
"""

import enum as _enum
import hashlib as _hashlib
import json as _json
import logging as _logging
import warnings as _warnings
from dataclasses import dataclass, field, asdict

import numpy as _np
from scipy import ndimage as _ndi
from scipy.spatial import cKDTree as _cKDTree

from ..grid import ScalarVolume, DisplacementField
from ..diffops import eig_sym3
from ..utils import (ParameterError, ConfigError, DataError, ShapeError,
                     InstabilityWarning, MissingLabelWarning)

logger = _logging.getLogger(__name__)

NORM_TOL = 1e-6
CONFIGURATIONS = ('jacobian', 'rigid_jacobian', 'rigid_shear_jacobian')


class Region(_enum.IntEnum):
    """Region codes stored in a :class:`RegMask`."""
    J = 0
    R = 1
    S = 2


###############################################################################
# Configuration
###############################################################################
@dataclass
class AnatomyConfig:
    """
    Which labels are rigid and which label pairs slide against each other.

    **Parameters**

    rigid_label_ids : list of int
        Labels regularised as rigid structures.
    shear_pairs : list of (int, int)
        Label pairs whose dilated masks overlap on a sliding interface.
    dilation_radius : int
        Radius, in voxels, of the spherical structuring element used to
        dilate each label of a shear pair (default 2).
    knn : int
        Neighbours used for the PCA normal estimation (default 20).
    knn_max : int
        Upper bound of the neighbourhood when it has to grow because the
        local point cloud is not planar.
    planarity : float
        A neighbourhood is planar when its smallest variance is at most
        ``planarity`` times the middle one.
    shear_over_rigid : bool
        Where an interface band overlaps a rigid label, label it S (True,
        default) or R.
    on_missing : {'raise', 'warn'}
        Behaviour when a configured label does not occur in the label map.
    label_names : dict
        Optional ``{id: name}`` mapping, documentation only.
    """
    rigid_label_ids: list = field(default_factory=list)
    shear_pairs: list = field(default_factory=list)
    dilation_radius: int = 2
    knn: int = 20
    knn_max: int = 320
    planarity: float = 0.5
    shear_over_rigid: bool = True
    on_missing: str = 'raise'
    label_names: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rigid_label_ids = [int(i) for i in self.rigid_label_ids]
        self.shear_pairs = [tuple(int(i) for i in pair)
                            for pair in self.shear_pairs]
        self.label_names = {int(k): str(v)
                            for k, v in self.label_names.items()}
        if any(i < 0 for i in self.rigid_label_ids):
            raise ParameterError("label ids must be non-negative")
        for pair in self.shear_pairs:
            if len(pair) != 2 or min(pair) < 0:
                raise ParameterError("shear pairs need two non-negative ids")
        if self.dilation_radius < 1:
            raise ParameterError("dilation_radius must be >= 1")
        if self.knn < 4:
            raise ParameterError("knn must be >= 4")
        if self.knn_max < self.knn:
            raise ParameterError("knn_max must be >= knn")
        if not 0 < self.planarity < 1:
            raise ParameterError("planarity must lie in (0, 1)")
        if self.on_missing not in ('raise', 'warn'):
            raise ParameterError("on_missing must be 'raise' or 'warn'")

    @classmethod
    def from_dict(cls, d):
        """Build from a JSON document; unknown keys are ignored."""
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**known)
        except (TypeError, ValueError) as err:
            raise ConfigError("invalid anatomy config: {}".format(err))

    @classmethod
    def from_json(cls, path):
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(_json.load(f))

    def to_dict(self):
        d = asdict(self)
        d['shear_pairs'] = [list(p) for p in self.shear_pairs]
        d['label_names'] = {str(k): v for k, v in self.label_names.items()}
        return d

    def config_hash(self):
        """Short digest of the settings that shape the mask."""
        d = self.to_dict()
        d.pop('label_names')
        text = _json.dumps(d, sort_keys=True)
        return _hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]

    def remap(self, mapping):
        """Copy of the config with label ids renamed through ``mapping``."""
        d = self.to_dict()
        d['rigid_label_ids'] = [mapping.get(i, i)
                                for i in self.rigid_label_ids]
        d['shear_pairs'] = [[mapping.get(a, a), mapping.get(b, b)]
                            for a, b in self.shear_pairs]
        d['label_names'] = {mapping.get(k, k): v
                            for k, v in self.label_names.items()}
        return type(self).from_dict(d)


###############################################################################
# Containers
###############################################################################
class RegMask:
    """
    Per-voxel region codes (see :class:`Region`).

    **Parameters**

    labels : array_like
        Integer array of shape ``(nx, ny, nz)`` with values in {0, 1, 2}.
    spacing : sequence of 3 floats
    provenance : str
        Hash of the configuration that produced the mask.
    """

    def __init__(self, labels, spacing=(1., 1., 1.), provenance=''):
        labels = _np.asarray(labels)
        if labels.ndim != 3:
            raise ShapeError("a mask needs 3 dimensions")
        if not _np.all(_np.isin(labels, [r.value for r in Region])):
            raise DataError("mask values must be region codes 0, 1 or 2")
        self.labels = labels.astype(_np.uint8)
        self.spacing = tuple(float(s) for s in spacing)
        self.provenance = provenance

    @property
    def dims(self):
        return self.labels.shape

    def region(self, region):
        """Boolean array of the voxels of ``region``."""
        return self.labels == Region(region)

    def counts(self):
        return {r.name: int(_np.count_nonzero(self.labels == r))
                for r in Region}

    def to_volume(self):
        return ScalarVolume(self.labels, self.spacing)

    @classmethod
    def from_volume(cls, vol, provenance=''):
        return cls(_np.rint(vol.data).astype(int), vol.spacing, provenance)

    @classmethod
    def full(cls, dims, region=Region.J, spacing=(1., 1., 1.)):
        return cls(_np.full(dims, int(region)), spacing)

    def __repr__(self):
        return 'RegMask(dims={}, counts={})'.format(self.dims, self.counts())


class DirectionField(DisplacementField):
    """
    Unit normals on the shear region, zero vectors elsewhere.
    """

    def __init__(self, data, spacing=(1., 1., 1.)):
        super().__init__(data, spacing)
        norm = self.norm()
        bad = (norm != 0) & (_np.abs(norm - 1.) > NORM_TOL)
        if _np.any(bad):
            raise DataError("direction vectors must be zero or unit length")

    @property
    def support(self):
        return self.norm() > 0


###############################################################################
# Mask construction
###############################################################################
def _ball(radius):
    r = int(radius)
    grid = _np.indices((2 * r + 1,) * 3) - r
    return _np.sum(grid ** 2, axis=0) <= r * r


def _available(ids, present, cfg, what):
    missing = sorted(set(ids) - present)
    if missing:
        message = "{} label ids {} not found in the label map".format(
            what, missing)
        if cfg.on_missing == 'raise':
            raise ConfigError(message)
        _warnings.warn(message, MissingLabelWarning)
    return [i for i in ids if i in present]


def build_mask(labels, cfg=None):
    """
    Build the regularisation mask of a label map.

    Voxels of any rigid label become R. For every shear pair both label
    masks are dilated with a ball of radius ``cfg.dilation_radius`` and their
    intersection becomes S. Everything else is J.

    **Parameters**

    labels : ScalarVolume
        Integer-valued label map.
    cfg : AnatomyConfig, optional
        Empty configuration (all J) when omitted.

    **Returns**

    RegMask
    """
    if cfg is None:
        cfg = AnatomyConfig()
    data = labels.data
    if not _np.all(data == _np.round(data)):
        raise DataError("label maps must be integer-valued")
    data = data.astype(int)
    present = set(int(v) for v in _np.unique(data))

    rigid_ids = _available(cfg.rigid_label_ids, present, cfg, 'rigid')
    rigid = _np.isin(data, rigid_ids)

    shear = _np.zeros(data.shape, dtype=bool)
    structure = _ball(cfg.dilation_radius)
    dilated = {}
    pair_ids = sorted(set(i for pair in cfg.shear_pairs for i in pair))
    usable = set(_available(pair_ids, present, cfg, 'shear'))
    for a, b in cfg.shear_pairs:
        if a == b:
            _warnings.warn("shear pair ({0}, {0}) skipped".format(a),
                           MissingLabelWarning)
            continue
        if a not in usable or b not in usable:
            continue
        for i in (a, b):
            if i not in dilated:
                dilated[i] = _ndi.binary_dilation(data == i,
                                                  structure=structure)
        shear |= dilated[a] & dilated[b]

    out = _np.full(data.shape, int(Region.J), dtype=_np.uint8)
    if cfg.shear_over_rigid:
        out[rigid] = Region.R
        out[shear] = Region.S
    else:
        out[shear] = Region.S
        out[rigid] = Region.R
    mask = RegMask(out, labels.spacing, cfg.config_hash())
    logger.debug("built mask %s", mask.counts())
    return mask


def restrict_mask(mask, configuration):
    """
    Derive one of the compared regularisation configurations.

    **Parameters**

    mask : RegMask
    configuration : {'jacobian', 'rigid_jacobian', 'rigid_shear_jacobian'}
        ``'jacobian'`` turns every voxel into J, ``'rigid_jacobian'`` turns
        S into J and ``'rigid_shear_jacobian'`` keeps the mask.

    **Returns**

    RegMask
    """
    if configuration not in CONFIGURATIONS:
        raise ParameterError("unknown configuration {!r}, expected one of "
                             "{}".format(configuration, CONFIGURATIONS))
    labels = mask.labels.copy()
    if configuration == 'jacobian':
        labels[:] = Region.J
    elif configuration == 'rigid_jacobian':
        labels[labels == Region.S] = Region.J
    return RegMask(labels, mask.spacing,
                   '{}:{}'.format(mask.provenance, configuration))


###############################################################################
# Interface normals
###############################################################################
def _orient(normals, points):
    # positive dot with the offset from the band centroid,
    # ties go to positive z, then to the first nonzero component
    offset = points - _np.mean(points, axis=0)
    dot = _np.einsum('ni,ni->n', normals, offset)
    tie = _np.abs(dot) <= 1e-9
    key = dot.copy()
    if _np.any(tie):
        tied = normals[tie]
        first = _np.argmax(_np.abs(tied[:, ::-1]) > 1e-12, axis=1)
        key[tie] = tied[_np.arange(len(tied)), 2 - first]
    return _np.where(key < 0, -1., 1.)[:, None] * normals


def estimate_normals(mask, cfg=None):
    """
    Unit normals of the S region by local PCA.

    For every S voxel the ``cfg.knn`` nearest S voxels are collected (voxel
    coordinates) and the eigenvector of the smallest variance of their
    centred coordinates is taken as the normal. When a neighbourhood is not
    planar (thick bands), it is doubled until it is, or until
    ``cfg.knn_max`` neighbours.

    Normals point away from the centroid of the S region; normals
    orthogonal to that offset point towards positive z.

    **Parameters**

    mask : RegMask
    cfg : AnatomyConfig, optional

    **Returns**

    DirectionField
    """
    if cfg is None:
        cfg = AnatomyConfig()
    band = mask.region(Region.S)
    points = _np.argwhere(band).astype(float)
    m = len(points)
    if m == 0:
        raise ParameterError("the mask has no S voxels")
    if m < cfg.knn:
        raise ParameterError("{} S voxels, fewer than knn={}"
                             .format(m, cfg.knn))
    tree = _cKDTree(points)
    normals = _np.empty((m, 3))
    todo = _np.arange(m)
    k = cfg.knn
    while todo.size:
        k = min(k, cfg.knn_max, m)
        _, idx = tree.query(points[todo], k=k)
        neighbours = points[idx]
        centred = neighbours - neighbours.mean(axis=1, keepdims=True)
        cov = _np.einsum('nki,nkj->nij', centred, centred) / k
        es = eig_sym3(cov)
        normals[todo] = es.vectors[:, :, 2]
        planar = es.values[:, 2] <= cfg.planarity * es.values[:, 1]
        if k >= min(cfg.knn_max, m):
            if not _np.all(planar):
                _warnings.warn("{} S voxels have non-planar "
                               "neighbourhoods".format(
                                   int(_np.count_nonzero(~planar))),
                               InstabilityWarning)
            break
        todo = todo[~planar]
        k *= 2
    normals = _orient(normals, points)
    data = _np.zeros((3,) + mask.dims)
    data[:, band] = normals.T
    logger.debug("estimated %d normals", m)
    return DirectionField(data, mask.spacing)
