"""
This module provides utility functions and exceptions that are used within
scikit-mechreg and that are also useful for external consumption.
"""

import warnings as _warnings
import zlib as _zlib

import numpy as _np


###############################################################################
# Exceptions and warnings
###############################################################################
class ShapeError(ValueError):
    """Raised when grids that should agree in shape do not."""
    pass


class ParameterError(ValueError):
    """Raised when a numerical parameter is outside its valid range."""
    pass


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""
    pass


class DataError(ValueError):
    """Raised when input data is inconsistent or unusable."""
    pass


class ConfigError(ValueError):
    """Raised when a configuration document is invalid."""
    pass


class NumericalError(ArithmeticError):
    """Raised when an iterative computation produces non-finite values."""
    pass


class InstabilityWarning(UserWarning):
    """Issued when results may be unstable."""
    pass


class MissingLabelWarning(UserWarning):
    """Issued when a configured label does not appear in a label map."""
    pass

# On import, make sure that our warnings are not filtered out.
_warnings.simplefilter('always', InstabilityWarning)
_warnings.simplefilter('always', MissingLabelWarning)


###############################################################################
# Random number generation
###############################################################################
def rng(seed, subsystem, index=0):
    """
    Counter-based random generator for one subsystem and one item.

    Every ``(seed, subsystem, index)`` triple gets an independent Philox
    stream, so drawing more items (a larger ``index`` range) never changes
    the items already drawn.

    **Parameters**

    seed : int
        Experiment seed (non-negative).
    subsystem : str
        Name of the consumer, e.g. ``'synth/rigid/train'``.
    index : int
        Item number inside the subsystem.

    **Returns**

    numpy.random.Generator
    """
    if seed < 0 or index < 0:
        raise ParameterError("seed and index must be non-negative")
    key = _zlib.crc32(subsystem.encode('utf-8'))
    seq = _np.random.SeedSequence([int(seed), key, int(index)])
    return _np.random.Generator(_np.random.Philox(seq))


###############################################################################
# Reductions
###############################################################################
def region_mean(values, region=None):
    """
    Mean of ``values`` over a boolean ``region``.

    The selected values are copied to a contiguous 1D array before summing,
    so numpy's pairwise summation runs in a fixed order whatever the number
    of threads.

    **Parameters**

    values : ndarray
        Per-voxel values.
    region : ndarray of bool, optional
        Voxels to average over. Whole array when omitted.

    **Returns**

    float
    """
    if region is None:
        selected = _np.ascontiguousarray(values, dtype=float).ravel()
    else:
        selected = _np.ascontiguousarray(values[region], dtype=float)
    if selected.size == 0:
        raise ParameterError("cannot average over an empty region")
    return float(_np.sum(selected) / selected.size)


def region_std(values, region=None):
    """Population standard deviation of ``values`` over ``region``."""
    mean = region_mean(values, region)
    if region is None:
        selected = _np.ascontiguousarray(values, dtype=float).ravel()
    else:
        selected = _np.ascontiguousarray(values[region], dtype=float)
    return float(_np.sqrt(_np.sum((selected - mean) ** 2) / selected.size))
