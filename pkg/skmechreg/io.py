"""
Volume files and JSON documents.

A ``.bmrv`` file is the ASCII magic ``BMRV1``, the length of the header as a
4-byte little-endian unsigned integer, a UTF-8 JSON header with sorted keys
and the raw payload::

    {"byteorder": "little", "channels": 1, "dims": [nx, ny, nz],
     "dtype": "f32", "layout": "row-major x-fastest",
     "magic": "BMRV1", "spacing": [d1, d2, d3]}

The payload stores the channels one after the other, each one with x
varying fastest. ``f32`` holds images and fields, ``u16`` label maps and
masks. Readers ignore header keys they do not know.

Other containers can be plugged in with :func:`register_reader`.
"""

import json as _json
import math as _math
import os as _os

import numpy as _np

from .grid import ScalarVolume, DisplacementField
from .utils import DataError

MAGIC = b'BMRV1'
DTYPES = {'f32': '<f4', 'u16': '<u2'}
LAYOUT = 'row-major x-fastest'


def _header(data, spacing, dtype):
    channels = 1 if data.ndim == 3 else data.shape[0]
    dims = data.shape[-3:]
    return {'magic': MAGIC.decode('ascii'), 'dims': [int(n) for n in dims],
            'spacing': [float(s) for s in spacing], 'dtype': dtype,
            'channels': int(channels), 'byteorder': 'little',
            'layout': LAYOUT}


def write_volume(path, vol, dtype='f32'):
    """
    Write a :class:`ScalarVolume` (1 channel) or a vector field (3 channels).

    **Parameters**

    path : str
    vol : ScalarVolume or DisplacementField
    dtype : {'f32', 'u16'}
        ``'u16'`` requires integer values in [0, 65535].
    """
    if dtype not in DTYPES:
        raise DataError("unsupported dtype {!r}".format(dtype))
    data = _np.asarray(vol.data)
    if dtype == 'u16':
        if not _np.all((data == _np.round(data)) & (data >= 0) &
                       (data <= 65535)):
            raise DataError("u16 volumes need integers in [0, 65535]")
    header = _json.dumps(_header(data, vol.spacing, dtype), sort_keys=True)
    header = header.encode('utf-8')
    channels = data.reshape((-1,) + data.shape[-3:])
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(_np.array([len(header)], dtype='<u4').tobytes())
        f.write(header)
        for channel in channels:
            f.write(channel.astype(DTYPES[dtype]).tobytes(order='F'))


def read_bmrv(path):
    """
    Read a ``.bmrv`` file.

    **Returns**

    ScalarVolume (1 channel) or DisplacementField (3 channels)
    """
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise DataError("{}: not a BMRV1 file".format(path))
    start = len(MAGIC) + 4
    size = int(_np.frombuffer(raw[len(MAGIC):start], dtype='<u4')[0])
    try:
        header = _json.loads(raw[start:start + size].decode('utf-8'))
        dims = tuple(int(n) for n in header['dims'])
        channels = int(header['channels'])
        dtype = DTYPES[header['dtype']]
        spacing = header['spacing']
    except (ValueError, KeyError, TypeError) as err:
        raise DataError("{}: invalid header ({})".format(path, err))
    if header.get('byteorder', 'little') != 'little' or \
            header.get('layout', LAYOUT) != LAYOUT:
        raise DataError("{}: unsupported byte order or layout".format(path))
    if channels not in (1, 3) or len(dims) != 3:
        raise DataError("{}: unsupported shape".format(path))
    payload = raw[start + size:]
    count = channels * int(_np.prod(dims))
    if len(payload) != count * _np.dtype(dtype).itemsize:
        raise DataError("{}: payload size does not match the header"
                        .format(path))
    values = _np.frombuffer(payload, dtype=dtype).astype(float)
    data = _np.stack([values[k * count // channels:(k + 1) * count //
                             channels].reshape(dims, order='F')
                      for k in range(channels)])
    if channels == 1:
        return ScalarVolume(data[0], spacing)
    return DisplacementField(data, spacing)


READERS = {'.bmrv': read_bmrv}


def register_reader(suffix, reader):
    """Register ``reader(path)`` for files ending in ``suffix``."""
    READERS[suffix.lower()] = reader


def read_volume(path):
    """Read a volume with the reader registered for its suffix."""
    suffix = _os.path.splitext(path)[1].lower()
    if suffix not in READERS:
        raise DataError("{}: no reader for {!r} files".format(path, suffix))
    return READERS[suffix](path)


###############################################################################
# JSON
###############################################################################
def to_jsonable(obj):
    """Plain Python copy of ``obj``; NaN and infinities become None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, _np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (_np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (_np.integer, int)):
        return int(obj)
    if isinstance(obj, (_np.floating, float)):
        return float(obj) if _math.isfinite(obj) else None
    return obj


def write_json(path, obj):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        _json.dump(to_jsonable(obj), f, indent=2, sort_keys=True)
        f.write('\n')


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return _json.load(f)
