import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


class ReportExportService:
    """Экспорт таблиц результатов в CSV (и сводки в Excel)"""

    def export_rows(self, rows: List[Dict], path: str, columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Запись строк в CSV с 17 значащими цифрами"""
        df = pd.DataFrame(rows, columns=columns)
        _ensure_parent(path)
        df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        logger.info(f"Записано {len(df)} строк в {path}")
        return df

    def export_fit_log(self, rows: List[Dict], path: str) -> pd.DataFrame:
        return self.export_rows(rows, path, columns=['iteration', 'loss', 'grad_norm'])

    def export_grid(self, values: np.ndarray, path: str) -> None:
        """Двумерный срез поля как CSV-матрица (ось 0 - строки)"""
        if values.ndim != 2:
            raise ValueError(f"Ожидался двумерный массив, получено ndim = {values.ndim}")
        _ensure_parent(path)
        pd.DataFrame(values).to_csv(path, header=False, index=False, float_format=FLOAT_FORMAT,
                                    lineterminator='\n')

    def export_summary_xlsx(self, report: pd.DataFrame, summary: pd.DataFrame, path: str) -> None:
        """Excel-отчёт: лист с метриками и лист со сводкой по случаям"""
        _ensure_parent(path)
        with pd.ExcelWriter(path, engine='openpyxl') as writer:
            report.to_excel(writer, sheet_name='Метрики', index=False)
            summary.to_excel(writer, sheet_name='Сводка', index=False)
        logger.info(f"Excel-отчёт записан в {path}")


def read_grid_csv(path: str) -> np.ndarray:
    return pd.read_csv(path, header=None, dtype=np.float64, float_precision='round_trip').to_numpy()
