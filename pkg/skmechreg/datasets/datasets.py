"""
Anatomy configurations shipped with the package.

- totalsegmentator_anatomy - rigid structures and sliding interfaces written
  against the TotalSegmentator (v2, ``total`` task) label table.
- synthetic_anatomy - configurations of the synthetic cuboid datasets.
"""

import json as _json
import os as _os

from ..models.anatomy import AnatomyConfig
from ..utils import ParameterError

_path = _os.path.dirname(_os.path.abspath(__file__))


class _BaseDescription:
    def __init__(self, description):
        self._description = description

    def __str__(self):
        return self._description

    def __repr__(self):
        return self._description


class _Base:
    def __init__(self, description, document):
        self.description = _BaseDescription(description)
        self._document = document
        self.config = AnatomyConfig.from_dict(document)

    def asdict(self):
        return dict(self._document)


def _load(name):
    with open(_os.path.join(_path, name), encoding='utf-8') as f:
        return _json.load(f)


# Bones and organ interfaces of an abdominal / thoracic CT
def totalsegmentator_anatomy():
    """Return a class containing the TotalSegmentator anatomy config."""
    _desc = """
    TotalSegmentator Anatomy
    ------------------------

    Fields:
    config: AnatomyConfig with
      rigid_label_ids: vertebrae S1 to C1, ribs (left and right, 1 to 12),
                       humerus, scapula, clavicula, femur and hip (left and
                       right), sacrum, skull, sternum (116) and costal
                       cartilages (117). The last two extend the usual bone
                       list: they are the hard tissue closing the thoracic
                       cage in front. Drop them from rigid_label_ids to keep
                       them pseudo-elastic.
      shear_pairs: lung lobes against each other, lungs against ribs and
                   costal cartilages, lungs against liver, spleen, stomach
                   and heart, and the main abdominal organ contacts (liver,
                   stomach, spleen, kidneys, gallbladder, duodenum, pancreas,
                   adrenal glands), plus the lower ribs against liver,
                   spleen and stomach.
      on_missing: 'warn', as a given scan rarely shows every structure.

    Label ids follow the TotalSegmentator v2 'total' task; any other label
    scheme can be used through AnatomyConfig.remap.
    """
    return _Base(_desc, _load('anatomy_totalseg.json'))


# Cuboid phantoms
def synthetic_anatomy(kind='shear'):
    """Return a class containing a synthetic dataset anatomy config."""
    _desc = """
    Synthetic Cuboid Anatomy
    ------------------------

    Fields:
    config: AnatomyConfig with
      kind='rigid': label 1 (the cuboid) rigid, no interface.
      kind='shear': labels 1 and 2 (the two bordering cuboids) rigid and
                    the pair (1, 2) sliding, dilation radius 2.
    """
    documents = _load('anatomy_synthetic.json')
    if kind not in documents:
        raise ParameterError("kind must be one of {}".format(
            sorted(documents)))
    return _Base(_desc, documents[kind])
