"""
Tests for datasets module
"""

import pytest

from skmechreg.datasets import totalsegmentator_anatomy, synthetic_anatomy
from skmechreg.models.anatomy import AnatomyConfig
from skmechreg.utils import ParameterError

datasets = (
    totalsegmentator_anatomy,
    lambda: synthetic_anatomy('rigid'),
    lambda: synthetic_anatomy('shear'),
)


def test_dataset_has_description():
    for dataset in datasets:
        assert isinstance(dataset().description.__str__(), str)


def test_dataset_has_config():
    for dataset in datasets:
        assert isinstance(dataset().config, AnatomyConfig)


def test_dataset_asdict():
    for dataset in datasets:
        assert isinstance(dataset().asdict(), dict)


def test_totalsegmentator_content():
    cfg = totalsegmentator_anatomy().config
    assert cfg.on_missing == 'warn'
    assert len(cfg.rigid_label_ids) > 20
    assert len(cfg.shear_pairs) > 10
    assert not any(a == b for a, b in cfg.shear_pairs)
    assert cfg.label_names[10] == 'lung_upper_lobe_left'


def test_synthetic_content():
    assert synthetic_anatomy('rigid').config.shear_pairs == []
    assert synthetic_anatomy('shear').config.shear_pairs == [(1, 2)]


def test_unknown_kind():
    with pytest.raises(ParameterError):
        synthetic_anatomy('curved')


def test_thoracic_cage_is_rigid():
    data = totalsegmentator_anatomy()
    cfg = data.config
    assert cfg.label_names[116] == 'sternum'
    assert cfg.label_names[117] == 'costal_cartilages'
    assert {116, 117} <= set(cfg.rigid_label_ids)
    assert 'sternum (116)' in str(data.description)
    assert 'cartilages (117)' in str(data.description)
