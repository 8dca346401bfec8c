"""
Command line interface.

    skmechreg synth --kind shear --counts 200 50 50 --seed 0 --out data
    skmechreg make-masks --labels labels.bmrv --anatomy totalseg --out masks
    skmechreg register --fixed f.bmrv --moving m.bmrv --mask mask.bmrv \\
        --normals normals.bmrv --config experiment.json --out run
    skmechreg evaluate --fixed f.bmrv --moving m.bmrv --field field.bmrv \\
        --out run
    skmechreg sweep --manifest data/manifest.json --config experiment.json \\
        --threads 8 --out sweep
    skmechreg report run1/report.json run2/report.json --out tables

Exit codes: 0 on success, 2 on usage errors, 3 on invalid data, files or
configuration, 4 on numerical failures.
"""

import argparse as _argparse
import logging as _logging
import os as _os
import sys as _sys
from dataclasses import dataclass, field

import numpy as _np
import pandas as _pd

from . import io as _io
from .grid import DisplacementField
from .datasets import synthetic as _synthetic
from .datasets import totalsegmentator_anatomy, synthetic_anatomy
from .models.anatomy import (AnatomyConfig, RegMask, DirectionField, Region,
                             build_mask, estimate_normals, restrict_mask,
                             CONFIGURATIONS)
from .models.losses import LossWeights
from .models.metrics import evaluate, aggregate, front
from .models.solver import (SolverConfig, register, sweep, lambda_grid,
                            triplet_grid)
from .utils import ConfigError, NumericalError

logger = _logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


###############################################################################
# Configuration
###############################################################################
@dataclass
class SweepConfig:
    """
    What a sweep runs.

    ``grid`` is ``'lambda'`` (``n`` values, see
    :func:`~skmechreg.models.solver.lambda_grid`), ``'triplet'`` (see
    :func:`~skmechreg.models.solver.triplet_grid`) or an explicit list of
    weight documents.
    """
    grid: object = 'lambda'
    n: int = 13
    configurations: list = field(default_factory=lambda: list(
        CONFIGURATIONS))
    splits: list = field(default_factory=lambda: ['test'])
    max_samples: int = None
    baselines: bool = True

    def __post_init__(self):
        if isinstance(self.grid, str) and \
                self.grid not in ('lambda', 'triplet'):
            raise ConfigError("grid must be 'lambda', 'triplet' or a list")
        for configuration in self.configurations:
            if configuration not in CONFIGURATIONS:
                raise ConfigError("unknown configuration {!r}"
                                  .format(configuration))

    def weights(self):
        if self.grid == 'lambda':
            return lambda_grid(self.n)
        if self.grid == 'triplet':
            return triplet_grid()
        return [LossWeights.from_dict(w) for w in self.grid]


@dataclass
class ExperimentConfig:
    """
    JSON document shared by all commands; every section is optional::

        {"manifest": "data/manifest.json", "seed": 0,
         "anatomy": {...}, "solver": {...}, "sweep": {...}, "synth": {...}}
    """
    manifest: str = None
    seed: int = 0
    anatomy: AnatomyConfig = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    synth: _synthetic.SynthParams = field(
        default_factory=_synthetic.SynthParams)

    @classmethod
    def from_dict(cls, d, base=None):
        try:
            out = cls(
                manifest=d.get('manifest'),
                seed=int(d.get('seed', 0)),
                anatomy=(AnatomyConfig.from_dict(d['anatomy'])
                         if 'anatomy' in d else None),
                solver=SolverConfig.from_dict(d.get('solver', {})),
                sweep=SweepConfig(**{k: v for k, v in
                                     d.get('sweep', {}).items()
                                     if k in SweepConfig.__dataclass_fields__}),
                synth=_synthetic.SynthParams.from_dict(d.get('synth', {})))
        except (TypeError, ValueError) as err:
            raise ConfigError("invalid experiment config: {}".format(err))
        if out.manifest is not None and base is not None:
            out.manifest = _os.path.join(base, out.manifest)
        if out.manifest is not None and not _os.path.exists(out.manifest):
            raise ConfigError("manifest {} does not exist"
                              .format(out.manifest))
        return out

    @classmethod
    def from_json(cls, path):
        if path is None:
            return cls()
        return cls.from_dict(_io.read_json(path),
                             _os.path.dirname(_os.path.abspath(path)))


def _anatomy(name):
    """Shipped anatomy name or path to a JSON document."""
    if name in ('totalseg', 'totalsegmentator'):
        return totalsegmentator_anatomy().config
    if name in ('synthetic-rigid', 'synthetic-shear'):
        return synthetic_anatomy(name.split('-')[1]).config
    return AnatomyConfig.from_json(name)


###############################################################################
# Commands
###############################################################################
def cmd_synth(args, cfg):
    seed = cfg.seed if args.seed is None else args.seed
    params = cfg.synth
    if args.size is not None:
        params = _synthetic.SynthParams.from_dict(
            dict(vars(params), size=args.size))
    _os.makedirs(args.out, exist_ok=True)
    entries = []
    for sample in _synthetic.draw_split(args.kind, seed, args.counts, params):
        entry = _synthetic.save_sample(
            sample, _os.path.join(args.out, sample.split))
        if sample.kind == 'shear':
            name = '{}_{:04d}_normals.bmrv'.format(sample.kind, sample.index)
            _io.write_volume(_os.path.join(args.out, sample.split, name),
                             sample.normals())
            entry['files_extra'] = {'normals': '{}/{}'.format(sample.split,
                                                              name)}
        entries.append(entry)
        logger.info("wrote %r", sample)
    manifest = {'kind': args.kind, 'seed': seed,
                'counts': dict(zip(_synthetic.SPLITS, args.counts)),
                'params': vars(params), 'samples': entries}
    _io.write_json(_os.path.join(args.out, 'manifest.json'), manifest)
    return EXIT_OK


def cmd_make_masks(args, cfg):
    labels = _io.read_volume(args.labels)
    anatomy = _anatomy(args.anatomy) if args.anatomy else cfg.anatomy
    if anatomy is None:
        raise ConfigError("no anatomy configuration given")
    mask = build_mask(labels, anatomy)
    if _np.any(mask.region(Region.S)):
        normals = estimate_normals(mask, anatomy)
    else:
        normals = DirectionField(_np.zeros((3,) + mask.dims), mask.spacing)
    _os.makedirs(args.out, exist_ok=True)
    _io.write_volume(_os.path.join(args.out, 'mask.bmrv'), mask.to_volume(),
                     'u16')
    _io.write_volume(_os.path.join(args.out, 'normals.bmrv'), normals)
    logger.info("mask %s", mask.counts())
    return EXIT_OK


def _pair(args):
    fixed = _io.read_volume(args.fixed)
    moving = _io.read_volume(args.moving)
    labels = None
    if args.fixed_labels and args.moving_labels:
        labels = (_io.read_volume(args.fixed_labels),
                  _io.read_volume(args.moving_labels))
    mask = None
    if args.mask:
        mask = RegMask.from_volume(_io.read_volume(args.mask))
    return fixed, moving, labels, mask


def _write_report(args, report, trace=None):
    d = report.to_dict()
    if not args.timings:
        d.pop('runtime')
    _io.write_json(_os.path.join(args.out, 'report.json'), d)
    if trace is not None:
        _io.write_json(_os.path.join(args.out, 'trace.json'),
                       trace.to_dict())
        if args.timings:
            _io.write_json(_os.path.join(args.out, 'timings.json'),
                           {'wall_time': trace.wall_time})


def cmd_register(args, cfg):
    fixed, moving, labels, mask = _pair(args)
    normals = None
    if args.normals:
        normals = DirectionField(_io.read_volume(args.normals).data,
                                 fixed.spacing)
    solver = cfg.solver
    if args.seed is not None:
        solver = SolverConfig.from_dict(dict(solver.to_dict(),
                                             seed=args.seed))
    if args.configuration and mask is not None:
        mask = restrict_mask(mask, args.configuration)
    use_labels = labels if solver.weights.gamma > 0 else None
    u, trace = register(fixed, moving, use_labels, mask, normals, solver)
    report = evaluate(fixed, moving, u, mask, labels, solver.eps_jac,
                      solver.mm)
    report.runtime = trace.wall_time
    _os.makedirs(args.out, exist_ok=True)
    _io.write_volume(_os.path.join(args.out, 'field.bmrv'), u)
    _write_report(args, report, trace)
    return EXIT_OK


def cmd_evaluate(args, cfg):
    fixed, moving, labels, mask = _pair(args)
    vol = _io.read_volume(args.field)
    u = DisplacementField(vol.data, fixed.spacing)
    report = evaluate(fixed, moving, u, mask, labels, cfg.solver.eps_jac,
                      cfg.solver.mm)
    _os.makedirs(args.out, exist_ok=True)
    _write_report(args, report)
    return EXIT_OK


def _samples(manifest_path, splits, max_samples):
    manifest = _io.read_json(manifest_path)
    root = _os.path.dirname(_os.path.abspath(manifest_path))
    count = 0
    for entry in manifest['samples']:
        if entry.get('split') not in splits:
            continue
        if max_samples is not None and count >= max_samples:
            return
        count += 1
        yield _synthetic.load_sample(entry, root)


def cmd_sweep(args, cfg):
    manifest = args.manifest or cfg.manifest
    if manifest is None:
        raise ConfigError("a sweep needs a manifest")
    settings = cfg.sweep
    samples = list(_samples(manifest, settings.splits, settings.max_samples))
    workers = args.threads or _os.cpu_count() or 1
    cells = sweep(samples, settings.weights(), cfg.solver,
                  settings.configurations, workers, settings.baselines)
    if not args.timings:
        cells = cells.drop(columns=['runtime'], errors='ignore')
    _os.makedirs(args.out, exist_ok=True)
    _write_csv(cells, _os.path.join(args.out, 'cells.csv'))
    summary = aggregate(cells, by=('configuration', 'lambda'))
    _write_csv(summary, _os.path.join(args.out, 'summary.csv'))
    table, correlations = front(cells[cells['configuration'].isin(
        settings.configurations)])
    _write_csv(table, _os.path.join(args.out, 'front.csv'))
    _io.write_json(_os.path.join(args.out, 'summary.json'), {
        'cells': len(cells),
        'failed': int((cells['status'] != 'ok').sum()),
        'spearman': {str(k): v for k, v in correlations.items()},
        'solver': cfg.solver.to_dict(), 'manifest': manifest})
    return EXIT_OK


def cmd_report(args, cfg):
    rows = []
    for path in args.reports:
        d = _io.read_json(path)
        row = {'run': _os.path.basename(_os.path.dirname(
            _os.path.abspath(path)))}
        row.update({k: v for k, v in d.items() if k != 'dice'})
        for label, value in sorted(d.get('dice', {}).items()):
            row['dice_{}'.format(label)] = value
        rows.append(row)
    frame = _pd.DataFrame(rows)
    _os.makedirs(args.out, exist_ok=True)
    _write_csv(frame, _os.path.join(args.out, 'reports.csv'))
    if args.by and args.by in frame:
        _write_csv(aggregate(frame, by=(args.by,)),
                   _os.path.join(args.out, 'aggregate.csv'))
    return EXIT_OK


def _write_csv(frame, path):
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator='\n')


###############################################################################
# Parser
###############################################################################
def _threads(text):
    value = int(text)
    if value < 0:
        raise _argparse.ArgumentTypeError("must be >= 0")
    return value


def _parser():
    common = _argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='experiment JSON document')
    common.add_argument('--seed', type=int, help='experiment seed')
    common.add_argument('--out', required=True, help='output directory')
    common.add_argument('--timings', action='store_true',
                        help='also write wall-clock timings')
    common.add_argument('-v', '--verbose', action='store_true',
                        help='debug logging')

    pair = _argparse.ArgumentParser(add_help=False)
    pair.add_argument('--fixed', required=True)
    pair.add_argument('--moving', required=True)
    pair.add_argument('--mask')
    pair.add_argument('--fixed-labels')
    pair.add_argument('--moving-labels')

    parser = _argparse.ArgumentParser(
        prog='skmechreg',
        description='Registration with biomechanical regularisation.')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', parents=[common],
                       help='generate a synthetic dataset')
    p.add_argument('--kind', choices=sorted(_synthetic.GENERATORS),
                   required=True)
    p.add_argument('--counts', type=int, nargs=3,
                   default=list(_synthetic.DEFAULT_COUNTS),
                   metavar=('TRAIN', 'VAL', 'TEST'))
    p.add_argument('--size', type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('make-masks', parents=[common],
                       help='regularisation mask and normals of a label map')
    p.add_argument('--labels', required=True)
    p.add_argument('--anatomy', help="'totalseg', 'synthetic-rigid', "
                   "'synthetic-shear' or a JSON file")
    p.set_defaults(func=cmd_make_masks)

    p = sub.add_parser('register', parents=[common, pair],
                       help='register a pair of volumes')
    p.add_argument('--normals')
    p.add_argument('--configuration', choices=CONFIGURATIONS)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser('evaluate', parents=[common, pair],
                       help='metrics of a stored field')
    p.add_argument('--field', required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('sweep', parents=[common],
                       help='run a weight sweep over a dataset')
    p.add_argument('--manifest')
    p.add_argument('--threads', type=_threads, default=1,
                   help='worker processes, 0 for one per CPU')
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser('report', parents=[common],
                       help='tabulate report.json files')
    p.add_argument('reports', nargs='+')
    p.add_argument('--by', help='column to aggregate by')
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    """Entry point of the ``skmechreg`` console script."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as err:
        return err.code
    level = _logging.DEBUG if args.verbose else _logging.INFO
    _logging.basicConfig(level=level,
                         format='%(asctime)s %(name)s %(levelname)s '
                                '%(message)s')
    try:
        cfg = ExperimentConfig.from_json(args.config)
        return args.func(args, cfg)
    except NumericalError as err:
        logger.error("%s", err)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as err:
        logger.error("%s: %s", type(err).__name__, err)
        return EXIT_DATA


if __name__ == '__main__':
    _sys.exit(main())
