import argparse
import logging
import os

from fields.models import BoundaryKind
from fields.storage import write_adpf, write_meta
from handlers.common import BaseHandler
from services.representation import load_params, save_params
from services.simulation import get_protocol, make_corpus
from services.solver import SolverConfig, integrate, wellposedness_report

logger = logging.getLogger(__name__)


class SimulateHandler(BaseHandler):
    """Команда simulate: корпус синтетических образцов"""

    command = 'simulate'
    defaults = {
        'protocol': '2d-gaussian',
        'n': 1,
        'seed': 0,
        'out': None,
        'anomaly_prob': 0.5,
        'n_frames': 40,
        'deterministic': False,
        'form': 'incompressible',
    }

    def __call__(self, args: argparse.Namespace) -> None:
        settings = self.resolve(args)
        self.require(settings, 'out')
        protocol = get_protocol(
            settings['protocol'],
            anomaly_prob=settings['anomaly_prob'],
            n_frames=settings['n_frames'],
            stochastic=not settings['deterministic'],
            form=settings['form'],
        )
        out = self.prepare_output(settings['out'])

        rows = []
        for index, sample in enumerate(make_corpus(protocol, settings['n'], settings['seed'])):
            sample_dir = os.path.join(out, f"sample_{index:04d}")
            os.makedirs(sample_dir, exist_ok=True)
            save_params(sample.params, os.path.join(sample_dir, 'params'))
            write_adpf(sample.series, os.path.join(sample_dir, 'series.adpf'))
            write_meta(os.path.join(sample_dir, 'meta.txt'), {
                'has_anomaly': 'true' if sample.has_anomaly else 'false',
                'seed': sample.seed,
            })
            rows.append({'sample': index, 'seed': sample.seed, 'has_anomaly': sample.has_anomaly})
            logger.info(f"Sample {index}: seed={sample.seed}, anomaly={sample.has_anomaly}")

        self.exporter.export_rows(rows, os.path.join(out, 'samples.csv'))
        self.write_manifest(out, settings, settings['seed'])


class ForwardHandler(BaseHandler):
    """Команда forward: прямой прогон из пакета параметров и начального поля"""

    command = 'forward'
    defaults = {
        'params': None,
        'init': None,
        'out': None,
        'n_frames': 40,
        'dt': 0.01,
        'substep': 'auto',
        'cfl_safety': 0.8,
        'form': 'incompressible',
        'integrator': 'rk4',
        'stochastic': False,
        'seed': 0,
        'boundary': 'neumann',
        'boundary_series': None,
    }

    def __call__(self, args: argparse.Namespace) -> None:
        settings = self.resolve(args)
        self.require(settings, 'params', 'init', 'out')
        self.check_inputs(params=settings['params'], init=settings['init'],
                          boundary_series=settings['boundary_series'])

        boundary = BoundaryKind(settings['boundary'])
        params = load_params(settings['params'])
        c0 = self.read_scalar(settings['init'], boundary)
        boundary_series = None
        if settings['boundary_series']:
            boundary_series = self.read_series(settings['boundary_series'], boundary)

        cfg = SolverConfig(
            dt=settings['dt'],
            substep=settings['substep'],
            cfl_safety=settings['cfl_safety'],
            form=settings['form'],
            stochastic=settings['stochastic'],
            seed=settings['seed'],
            integrator=settings['integrator'],
        )
        series = integrate(c0, params, cfg, settings['n_frames'], boundary_series)

        out = self.prepare_output(settings['out'])
        write_adpf(series, os.path.join(out, 'series.adpf'))
        self.write_manifest(out, settings, settings['seed'])


class WellposedHandler(BaseHandler):
    """Команда wellposed: оценки констант Липшица и роста"""

    command = 'wellposed'
    defaults = {
        'params': None,
        'out': None,
    }

    def __call__(self, args: argparse.Namespace) -> None:
        settings = self.resolve(args)
        self.require(settings, 'params', 'out')
        self.check_inputs(params=settings['params'])

        report = wellposedness_report(load_params(settings['params']))
        out = self.prepare_output(settings['out'])
        rows = [{'constant': key, 'value': value} for key, value in report.as_dict().items()]
        self.exporter.export_rows(rows, os.path.join(out, 'wellposedness.csv'))
        self.write_manifest(out, settings)
