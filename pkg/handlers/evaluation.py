import argparse
import logging
import math
import os
from collections import defaultdict
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config import ANOMALY_SUPPORT_LEVEL
from fields.models import ScalarField
from handlers.common import BaseHandler
from services.metrics_service import (
    RegionMask, abs_tvalue, best_threshold, dice, rae, relative_mean, roc_auc, roc_curve,
    segment_threshold, summarize,
)
from services.representation import TransportParams, derive, feature_maps, load_params
from utils.exceptions import ConfigError, DegenerateStatisticError
from utils.formatters import parse_int_list
from utils.image_utils import middle_slice, save_pgm
from utils.validators import validate_frames

logger = logging.getLogger(__name__)


def _safe(compute: Callable[[], float]) -> Tuple[float, str]:
    """Вырожденная статистика записывается в отчёт как nan с причиной"""
    try:
        return compute(), ''
    except DegenerateStatisticError as e:
        logger.warning(f"Degenerate statistic: {e}")
        return math.nan, str(e)


def parameter_maps(params: TransportParams) -> Dict[str, ScalarField]:
    """Карты признаков для оценки: ||V||, след D, FA, σ и A"""
    fields = derive(params)
    maps = feature_maps(fields.v, fields.d)
    maps['sigma'] = fields.sigma
    maps['a'] = fields.a
    return maps


def lesion_mask(truth: TransportParams, mask_path: Optional[str], reader) -> np.ndarray:
    if mask_path:
        mask = reader(mask_path)
        if mask.grid.shape != truth.grid.shape:
            raise ConfigError(f"Маска {mask_path} задана на другой сетке")
        return mask.values > 0.5
    return truth.anomaly.values < ANOMALY_SUPPORT_LEVEL


class MetricsHandler(BaseHandler):
    """Команда metrics: RAE параметров, μʳ, |t| и AUC карт признаков, Dice сегментации Â"""

    command = 'metrics'
    defaults = {
        'pred': [],
        'truth': [],
        'mask': [],
        'pred_series': None,
        'truth_series': None,
        'report': None,
        'xlsx': None,
        'axis': 0,
    }

    def __call__(self, args: argparse.Namespace) -> None:
        settings = self.resolve(args)
        self.require(settings, 'report')
        preds, truths, masks = settings['pred'], settings['truth'], settings['mask']
        if len(preds) != len(truths):
            raise ConfigError(f"Число --pred ({len(preds)}) не совпадает с числом --truth ({len(truths)})")
        if masks and len(masks) != len(preds):
            raise ConfigError("Маски задаются либо для всех случаев, либо ни для одного")
        if not preds and not settings['pred_series']:
            raise ConfigError("Нечего сравнивать: задайте --pred/--truth или --pred-series/--truth-series")
        for path in preds + truths + masks:
            self.check_inputs(input=path)

        rows: List[dict] = []
        a_hats, supports = [], []
        for case, (pred_dir, truth_dir) in enumerate(zip(preds, truths)):
            pred, truth = load_params(pred_dir), load_params(truth_dir)
            support = lesion_mask(truth, masks[case] if masks else None, self.read_scalar)
            rows.extend(self.case_rows(case, pred, truth, support, settings['axis']))
            if support.any():
                a_hats.append(pred.anomaly.a)
                supports.append(support)

        if a_hats:
            tau, mean_dice = best_threshold(a_hats, supports)
            logger.info(f"Best shared threshold tau={tau} with mean Dice {mean_dice:.4f}")
            for case, (a_hat, support) in enumerate(zip(a_hats, supports)):
                rows.append(self.row(case, 'A', 'dice', dice(segment_threshold(a_hat, tau), support)))
            rows.append(self.row('all', 'A', 'tau', tau))

        if settings['pred_series'] or settings['truth_series']:
            self.require(settings, 'pred_series', 'truth_series')
            self.check_inputs(pred_series=settings['pred_series'], truth_series=settings['truth_series'])
            pred_series = self.read_series(settings['pred_series'])
            truth_series = self.read_series(settings['truth_series'])
            value, note = _safe(lambda: rae(truth_series, pred_series))
            rows.append(self.row('series', 'C', 'rae', value, note))

        report = pd.DataFrame(rows, columns=['case', 'target', 'metric', 'value', 'note'])
        summary = self.summary(report) if len(preds) > 1 else pd.DataFrame(columns=report.columns)
        full = pd.concat([report, summary], ignore_index=True) if len(summary) else report

        self.exporter.export_rows(full.to_dict('records'), settings['report'], columns=list(report.columns))
        if settings['xlsx']:
            self.exporter.export_summary_xlsx(report, summary, settings['xlsx'])
        self.write_manifest(os.path.dirname(os.path.abspath(settings['report'])), settings)

    @staticmethod
    def row(case, target: str, metric: str, value: float, note: str = '') -> dict:
        return {'case': case, 'target': target, 'metric': metric, 'value': value, 'note': note}

    def case_rows(self, case: int, pred: TransportParams, truth: TransportParams,
                  support: np.ndarray, axis: int) -> List[dict]:
        rows = []
        pf, tf = derive(pred), derive(truth)
        for target, truth_field, pred_field in (
            ('V', tf.v, pf.v), ('V_bar', tf.v_bar, pf.v_bar), ('D', tf.d, pf.d),
            ('D_bar', tf.d_bar, pf.d_bar), ('A', tf.a, pf.a), ('sigma', tf.sigma, pf.sigma),
        ):
            value, note = _safe(lambda: rae(truth_field, pred_field))
            rows.append(self.row(case, target, 'rae', value, note))

        if not support.any():
            logger.info(f"Case {case}: no lesion cells, region metrics skipped")
            return rows

        regions = RegionMask.from_lesion(pred.grid, support, axis)
        union = regions.mask | regions.contralateral
        for name, feature in parameter_maps(pred).items():
            value, note = _safe(lambda: relative_mean(feature, regions))
            rows.append(self.row(case, name, 'mu_r', value, note))
            value, note = _safe(lambda: abs_tvalue(feature, regions))
            rows.append(self.row(case, name, 'abs_t', value, note))
            value, note = _safe(lambda: roc_auc(feature.values[union], regions.mask[union]))
            rows.append(self.row(case, name, 'auc', value, note))

        value, note = _safe(lambda: roc_auc(1.0 - pred.anomaly.values, support))
        rows.append(self.row(case, 'A', 'auc_support', value, note))
        return rows

    @staticmethod
    def summary(report: pd.DataFrame) -> pd.DataFrame:
        groups: Dict[Tuple[str, str], List[float]] = defaultdict(list)
        for record in report.to_dict('records'):
            if isinstance(record['case'], int):
                groups[(record['target'], record['metric'])].append(record['value'])
        rows = []
        for (target, metric), values in groups.items():
            value, note = _safe(lambda: summarize(values))
            stats = value if isinstance(value, dict) else {'mean': math.nan, 'median': math.nan, 'std': math.nan}
            for statistic in ('mean', 'median', 'std'):
                rows.append({'case': statistic, 'target': target, 'metric': metric,
                             'value': stats[statistic], 'note': note})
        return pd.DataFrame(rows, columns=list(report.columns))


class ExportPlotHandler(BaseHandler):
    """Команда export-plot: CSV/PGM для внешних средств построения графиков"""

    command = 'export-plot'
    defaults = {
        'series': None,
        'frames': '0',
        'params': None,
        'mask': None,
        'out': None,
    }

    def __call__(self, args: argparse.Namespace) -> None:
        settings = self.resolve(args)
        self.require(settings, 'out')
        if not settings['series'] and not settings['params']:
            raise ConfigError("Задайте --series и/или --params")
        self.check_inputs(series=settings['series'], params=settings['params'], mask=settings['mask'])
        out = self.prepare_output(settings['out'])

        if settings['series']:
            self.export_series(settings['series'], settings['frames'], out)
        if settings['params']:
            self.export_params(settings['params'], settings['mask'], out)
        self.write_manifest(out, settings)

    def _export_slice(self, values: np.ndarray, name: str, out: str, value_range=None) -> None:
        plane = middle_slice(values)
        self.exporter.export_grid(plane, os.path.join(out, f"{name}.csv"))
        save_pgm(plane, os.path.join(out, f"{name}.pgm"), value_range)

    def export_series(self, path: str, frames_text: str, out: str) -> None:
        series = self.read_series(path)
        frames = parse_int_list(str(frames_text))
        ok, message = validate_frames(frames, series.n_frames)
        if not ok:
            raise ConfigError(message)
        value_range = (float(series.data.min()), float(series.data.max()))
        for index in frames:
            self._export_slice(series.data[index], f"frame_{index:04d}", out, value_range)

    def export_params(self, directory: str, mask_path: Optional[str], out: str) -> None:
        params = load_params(directory)
        for name, feature in parameter_maps(params).items():
            self._export_slice(feature.values, f"map_{name}", out)

        support = lesion_mask(params, mask_path, self.read_scalar) if mask_path else None
        if support is not None and support.any() and not support.all():
            fpr, tpr, thresholds = roc_curve(1.0 - params.anomaly.values, support)
            rows = [{'fpr': f, 'tpr': t, 'threshold': h} for f, t, h in zip(fpr, tpr, thresholds)]
            self.exporter.export_rows(rows, os.path.join(out, 'roc.csv'))
