import argparse
import logging
import sys
from typing import List, Optional

from config import LOG_LEVEL, TOOL_VERSION
from handlers.common import run_command
from handlers.evaluation import ExportPlotHandler, MetricsHandler
from handlers.inverse import InvertHandler
from handlers.simulation import ForwardHandler, SimulateHandler, WellposedHandler

logger = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='Файл key=value; флаги имеют приоритет')


def build_parser() -> argparse.ArgumentParser:
    """Описание команд; все значения по умолчанию - None, чтобы отличать явно заданные флаги"""
    parser = argparse.ArgumentParser(prog='adpf', description='Advection-diffusion toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {TOOL_VERSION}')
    parser.add_argument('--log-level', default=None, help='Уровень логирования (по умолчанию из LOG_LEVEL)')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Синтетический корпус')
    _add_common(simulate)
    simulate.add_argument('--protocol')
    simulate.add_argument('--n', type=int)
    simulate.add_argument('--seed', type=int)
    simulate.add_argument('--out')
    simulate.add_argument('--anomaly-prob', type=float)
    simulate.add_argument('--n-frames', type=int)
    simulate.add_argument('--deterministic', action='store_true', default=None)
    simulate.add_argument('--form', choices=['incompressible', 'conservative'])

    forward = commands.add_parser('forward', help='Прямой прогон')
    _add_common(forward)
    forward.add_argument('--params')
    forward.add_argument('--init')
    forward.add_argument('--out')
    forward.add_argument('--n-frames', type=int)
    forward.add_argument('--dt', type=float)
    forward.add_argument('--substep')
    forward.add_argument('--cfl-safety', type=float)
    forward.add_argument('--form', choices=['incompressible', 'conservative'])
    forward.add_argument('--integrator', choices=['rk4', 'rk45'])
    forward.add_argument('--stochastic', action='store_true', default=None)
    forward.add_argument('--seed', type=int)
    forward.add_argument('--boundary', choices=['neumann', 'cauchy'])
    forward.add_argument('--boundary-series')

    invert = commands.add_parser('invert', help='Обратная задача')
    _add_common(invert)
    invert.add_argument('--series')
    invert.add_argument('--mode', choices=['physics', 'transport'])
    invert.add_argument('--out')
    invert.add_argument('--truth')
    invert.add_argument('--init')
    invert.add_argument('--max-iters', type=int)
    invert.add_argument('--step-size', type=float)
    invert.add_argument('--n-in', type=int)
    invert.add_argument('--n-out', type=int)
    invert.add_argument('--window-stride', type=int)
    invert.add_argument('--w-ul', type=float)
    invert.add_argument('--w-ss', type=float)
    invert.add_argument('--w-sigma', type=float)
    invert.add_argument('--form', choices=['incompressible', 'conservative'])
    invert.add_argument('--substep')
    invert.add_argument('--seed', type=int)
    invert.add_argument('--no-grad-check', dest='grad_check', action='store_false', default=None)
    invert.add_argument('--warm-start-iters', type=int)

    metrics = commands.add_parser('metrics', help='Метрики качества')
    _add_common(metrics)
    metrics.add_argument('--pred', action='append')
    metrics.add_argument('--truth', action='append')
    metrics.add_argument('--mask', action='append')
    metrics.add_argument('--pred-series')
    metrics.add_argument('--truth-series')
    metrics.add_argument('--report')
    metrics.add_argument('--xlsx')
    metrics.add_argument('--axis', type=int)

    export = commands.add_parser('export-plot', help='Экспорт данных для графиков')
    _add_common(export)
    export.add_argument('--series')
    export.add_argument('--frames')
    export.add_argument('--params')
    export.add_argument('--mask')
    export.add_argument('--out')

    wellposed = commands.add_parser('wellposed', help='Оценки констант корректности')
    _add_common(wellposed)
    wellposed.add_argument('--params')
    wellposed.add_argument('--out')

    return parser


HANDLERS = {
    'simulate': SimulateHandler,
    'forward': ForwardHandler,
    'invert': InvertHandler,
    'metrics': MetricsHandler,
    'export-plot': ExportPlotHandler,
    'wellposed': WellposedHandler,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=(args.log_level or LOG_LEVEL).upper(),
        stream=sys.stdout,
    )
    handler = HANDLERS[args.command]()
    logger.info(f"Command {args.command} started")
    return run_command(handler, args)


if __name__ == '__main__':
    sys.exit(main())
