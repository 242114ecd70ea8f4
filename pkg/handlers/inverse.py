import argparse
import logging
import os

from handlers.common import BaseHandler
from services.inverse import FitConfig, fit
from services.representation import load_params, save_params

logger = logging.getLogger(__name__)


class InvertHandler(BaseHandler):
    """Команда invert: восстановление параметров по ряду"""

    command = 'invert'
    defaults = {
        'series': None,
        'mode': 'transport',
        'out': None,
        'truth': None,
        'init': None,
        'max_iters': 300,
        'step_size': 1e-2,
        'n_in': 10,
        'n_out': 10,
        'window_stride': 0,
        'w_ul': 0.5,
        'w_ss': 0.1,
        'w_sigma': 0.5,
        'form': 'incompressible',
        'substep': 'auto',
        'seed': 0,
        'grad_check': True,
        'warm_start_iters': 100,
    }

    def __call__(self, args: argparse.Namespace) -> None:
        settings = self.resolve(args)
        self.require(settings, 'series', 'out')
        self.check_inputs(series=settings['series'], truth=settings['truth'], init=settings['init'])

        observed = self.read_series(settings['series'])
        truth = load_params(settings['truth']) if settings['truth'] else None
        init = load_params(settings['init']) if settings['init'] else None
        substep = None if settings['substep'] == 'auto' else float(settings['substep'])

        cfg = FitConfig(
            mode=settings['mode'],
            w_ul=settings['w_ul'],
            w_ss=settings['w_ss'],
            w_sigma=settings['w_sigma'],
            n_in=settings['n_in'],
            n_out=settings['n_out'],
            max_iters=settings['max_iters'],
            step_size=settings['step_size'],
            window_stride=settings['window_stride'] or None,
            form=settings['form'],
            substep=substep,
            grad_check=settings['grad_check'],
            warm_start_iters=settings['warm_start_iters'],
            seed=settings['seed'],
        )
        result = fit(observed, cfg, truth=truth, init=init)

        out = self.prepare_output(settings['out'])
        save_params(result.params_hat, out)
        self.exporter.export_fit_log(result.log_rows(), os.path.join(out, 'fit_log.csv'))

        summary = {
            'best_iteration': result.best_iteration,
            'best_loss': result.best_loss,
            'grad_check': result.grad_check,
            'sigma_active': result.sigma_active,
            'warm_start_loss': result.warm_start_loss,
        }
        self.write_manifest(out, {**settings, **{f"result_{k}": v for k, v in summary.items()}}, settings['seed'])
        logger.info(f"Inversion written to {out}: best loss {result.best_loss:.6e}")
