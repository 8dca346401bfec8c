"""
Tests for the command line interface
"""

import json
import os

import pytest
import pandas as pd
from numpy.testing import assert_allclose

from skmechreg.cli import main, ExperimentConfig, SweepConfig
from skmechreg.utils import ConfigError

SMALL = {"seed": 3,
         "synth": {"size": 32, "edge": [8, 12], "jitter": 2,
                   "max_angle": 10., "max_translation": 2.},
         "solver": {"levels": 1, "iters": 3}}


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def config(tmp_path):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps(SMALL), encoding='utf-8')
    return str(path)


@pytest.fixture
def rigid(tmp_path, config):
    out = tmp_path / 'rigid'
    assert run('synth', '--kind', 'rigid', '--counts', 1, 0, 1,
               '--config', config, '--out', out) == 0
    return out


def files(root, name):
    return [str(root / 'train' / 'rigid_0000_{}.bmrv'.format(n))
            for n in name.split()]


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig.from_json(None)
        assert cfg.anatomy is None
        assert cfg.sweep.grid == 'lambda'

    def test_missing_manifest(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({'manifest': 'nowhere.json'})

    def test_invalid_section(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({'solver': {'iters': 0}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({'sweep': {'grid': 'random'}})

    def test_sweep_weights(self):
        assert len(SweepConfig(n=4).weights()) == 4
        grid = SweepConfig(grid=[{'alpha': 0.9, 'lambda': 0.1}]).weights()
        assert grid[0].lam == 0.1


class TestSynth:
    def test_manifest(self, rigid):
        manifest = json.loads((rigid / 'manifest.json').read_text())
        assert manifest['kind'] == 'rigid'
        assert manifest['seed'] == 3
        assert manifest['counts'] == {'train': 1, 'val': 0, 'test': 1}
        assert [s['split'] for s in manifest['samples']] == ['train', 'test']
        for path in manifest['samples'][1]['files'].values():
            assert os.path.exists(str(rigid / path))

    def test_deterministic(self, rigid, tmp_path, config):
        again = tmp_path / 'again'
        assert run('synth', '--kind', 'rigid', '--counts', 1, 0, 1,
                   '--config', config, '--out', again) == 0
        assert (rigid / 'manifest.json').read_bytes() == \
            (again / 'manifest.json').read_bytes()
        name = 'train/rigid_0000_moving.bmrv'
        assert (rigid / name).read_bytes() == (again / name).read_bytes()

    def test_seed_flag(self, rigid, tmp_path, config):
        other = tmp_path / 'other'
        assert run('synth', '--kind', 'rigid', '--counts', 1, 0, 0,
                   '--config', config, '--seed', 4, '--out', other) == 0
        name = 'train/rigid_0000_moving.bmrv'
        assert (rigid / name).read_bytes() != (other / name).read_bytes()

    def test_shear_writes_normals(self, tmp_path, config):
        out = tmp_path / 'shear'
        assert run('synth', '--kind', 'shear', '--counts', 1, 0, 0,
                   '--config', config, '--out', out) == 0
        manifest = json.loads((out / 'manifest.json').read_text())
        extra = manifest['samples'][0]['files_extra']['normals']
        assert os.path.exists(str(out / extra))


class TestMakeMasks:
    def test_matches_dataset_mask(self, rigid, tmp_path):
        out = tmp_path / 'masks'
        labels, = files(rigid, 'fixed_labels')
        assert run('make-masks', '--labels', labels, '--anatomy',
                   'synthetic-rigid', '--out', out) == 0
        mask, = files(rigid, 'mask')
        assert (out / 'mask.bmrv').read_bytes() == open(mask, 'rb').read()
        assert (out / 'normals.bmrv').exists()

    def test_no_anatomy(self, rigid, tmp_path):
        labels, = files(rigid, 'fixed_labels')
        assert run('make-masks', '--labels', labels,
                   '--out', tmp_path / 'masks') == 3


class TestRegisterEvaluate:
    def test_register(self, rigid, tmp_path, config):
        fixed, moving, mask = files(rigid, 'fixed moving mask')
        out = tmp_path / 'run'
        assert run('register', '--fixed', fixed, '--moving', moving,
                   '--mask', mask, '--config', config, '--out', out) == 0
        report = json.loads((out / 'report.json').read_text())
        assert 'runtime' not in report
        assert report['l_rigid'] is not None
        assert (out / 'field.bmrv').exists()
        assert (out / 'trace.json').exists()
        assert not (out / 'timings.json').exists()

        evaluated = tmp_path / 'eval'
        assert run('evaluate', '--fixed', fixed, '--moving', moving,
                   '--mask', mask, '--field', out / 'field.bmrv',
                   '--out', evaluated) == 0
        again = json.loads((evaluated / 'report.json').read_text())
        assert_allclose(again['mse'], report['mse'], rtol=1e-4, atol=1e-10)

    def test_timings(self, rigid, tmp_path, config):
        fixed, moving = files(rigid, 'fixed moving')
        out = tmp_path / 'run'
        assert run('register', '--fixed', fixed, '--moving', moving,
                   '--config', config, '--timings', '--out', out) == 0
        assert 'runtime' in json.loads((out / 'report.json').read_text())
        assert (out / 'timings.json').exists()

    def test_labels(self, rigid, tmp_path, config):
        fixed, moving, fl, ml = files(
            rigid, 'fixed moving fixed_labels moving_labels')
        out = tmp_path / 'run'
        assert run('register', '--fixed', fixed, '--moving', moving,
                   '--fixed-labels', fl, '--moving-labels', ml,
                   '--config', config, '--out', out) == 0
        report = json.loads((out / 'report.json').read_text())
        assert set(report['dice']) == {'1'}

    def test_report(self, rigid, tmp_path, config):
        fixed, moving = files(rigid, 'fixed moving')
        out = tmp_path / 'run'
        run('register', '--fixed', fixed, '--moving', moving,
            '--config', config, '--out', out)
        tables = tmp_path / 'tables'
        assert run('report', out / 'report.json', '--by', 'run',
                   '--out', tables) == 0
        frame = pd.read_csv(str(tables / 'reports.csv'))
        assert len(frame) == 1
        assert frame.loc[0, 'run'] == 'run'
        assert (tables / 'aggregate.csv').exists()


class TestSweep:
    def test_sweep(self, rigid, tmp_path):
        cfg = dict(SMALL, sweep={'grid': [{'alpha': 0.9, 'lambda': 0.1}],
                                 'configurations': ['jacobian'],
                                 'baselines': False})
        path = tmp_path / 'sweep.json'
        path.write_text(json.dumps(cfg), encoding='utf-8')
        out = tmp_path / 'sweep'
        assert run('sweep', '--manifest', rigid / 'manifest.json',
                   '--config', path, '--out', out) == 0
        cells = pd.read_csv(str(out / 'cells.csv'))
        assert len(cells) == 1
        assert cells.loc[0, 'split'] == 'test'
        assert 'runtime' not in cells
        summary = json.loads((out / 'summary.json').read_text())
        assert summary['cells'] == 1 and summary['failed'] == 0
        assert (out / 'summary.csv').exists()
        assert (out / 'front.csv').exists()

    def test_needs_manifest(self, tmp_path):
        assert run('sweep', '--out', tmp_path / 'sweep') == 3


class TestExitCodes:
    def test_usage(self, tmp_path):
        assert run() == 2
        assert run('synth', '--out', tmp_path) == 2
        assert run('synth', '--kind', 'curved', '--out', tmp_path) == 2

    def test_negative_threads(self, tmp_path):
        assert run('sweep', '--threads', -1, '--out', tmp_path) == 2
        assert run('sweep', '--threads', 'many', '--out', tmp_path) == 2

    @pytest.mark.parametrize("command", [
        ('synth', '--kind', 'rigid'),
        ('make-masks', '--labels', 'labels.bmrv'),
        ('report', 'report.json'),
    ])
    def test_threads_only_for_sweep(self, tmp_path, command):
        assert run(*command, '--threads', 2, '--out', tmp_path) == 2

    def test_missing_file(self, tmp_path):
        assert run('evaluate', '--fixed', tmp_path / 'none.bmrv',
                   '--moving', tmp_path / 'none.bmrv',
                   '--field', tmp_path / 'none.bmrv',
                   '--out', tmp_path / 'eval') == 3

    def test_bad_file(self, tmp_path):
        bad = tmp_path / 'bad.bmrv'
        bad.write_bytes(b'garbage')
        assert run('make-masks', '--labels', bad, '--anatomy', 'totalseg',
                   '--out', tmp_path / 'masks') == 3

    def test_bad_config(self, tmp_path):
        path = tmp_path / 'experiment.json'
        path.write_text('{"solver": {"lr": -1}}', encoding='utf-8')
        assert run('synth', '--kind', 'rigid', '--config', path,
                   '--out', tmp_path / 'out') == 3
