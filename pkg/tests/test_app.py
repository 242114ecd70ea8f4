import os

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from app import main
from fields.models import Grid, ScalarField, TimeSeries
from fields.storage import read_adpf, read_meta, write_adpf
from services.report_export import read_grid_csv
from services.representation import load_params


def _error_lines(capsys):
    return [line for line in capsys.readouterr().err.splitlines() if line.startswith('adpf-error')]


@pytest.fixture(scope='module')
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp('corpus')
    code = main(['simulate', '--n', '1', '--seed', '4', '--n-frames', '5', '--deterministic',
                 '--anomaly-prob', '0', '--out', str(out)])
    assert code == 0
    sample = out / 'sample_0000'
    series = read_adpf(str(sample / 'series.adpf'))
    init = out / 'init.adpf'
    write_adpf(ScalarField(series.grid, series.data[0]), str(init))
    return out


class TestSimulate:
    def test_layout(self, corpus):
        sample = corpus / 'sample_0000'
        for name in ('psi', 'b', 'lambda', 'a', 'sigma'):
            assert (sample / 'params' / f'{name}.adpf').exists()
        assert read_meta(str(sample / 'meta.txt')) == {'has_anomaly': 'false', 'seed': '4'}
        assert read_adpf(str(sample / 'series.adpf')).n_frames == 5
        assert pd.read_csv(corpus / 'samples.csv').to_dict('records') == [
            {'sample': 0, 'seed': 4, 'has_anomaly': False}]

    def test_rerun_is_identical(self, tmp_path):
        argv = ['simulate', '--n', '1', '--seed', '9', '--n-frames', '3', '--out']
        assert main(argv + [str(tmp_path / 'first')]) == 0
        assert main(argv + [str(tmp_path / 'second')]) == 0
        for name in ('manifest.txt', 'samples.csv', os.path.join('sample_0000', 'series.adpf')):
            assert (tmp_path / 'first' / name).read_bytes() == (tmp_path / 'second' / name).read_bytes(), name

    def test_manifest(self, corpus):
        lines = (corpus / 'manifest.txt').read_text().splitlines()
        assert lines[:3] == ['tool_version=1.0.0', 'command=simulate', 'seed=4']
        assert 'anomaly_prob=0' in lines
        assert 'n_frames=5' in lines


class TestForward:
    def test_reproduces_simulation(self, corpus, tmp_path):
        sample = corpus / 'sample_0000'
        code = main(['forward', '--params', str(sample / 'params'), '--init', str(corpus / 'init.adpf'),
                     '--n-frames', '5', '--out', str(tmp_path)])
        assert code == 0
        series = read_adpf(str(tmp_path / 'series.adpf'))
        expected = read_adpf(str(sample / 'series.adpf'))
        assert np.array_equal(series.data[0], expected.data[0])
        assert np.allclose(series.data, expected.data, rtol=0, atol=1e-12)

        report = tmp_path / 'report.csv'
        code = main(['metrics', '--pred-series', str(tmp_path / 'series.adpf'),
                     '--truth-series', str(sample / 'series.adpf'), '--report', str(report)])
        assert code == 0
        rows = pd.read_csv(report).to_dict('records')
        assert len(rows) == 1
        assert rows[0]['metric'] == 'rae' and rows[0]['value'] <= 1e-10

    def test_missing_params(self, corpus, tmp_path, capsys):
        code = main(['forward', '--init', str(corpus / 'init.adpf'), '--out', str(tmp_path)])
        assert code == 2
        lines = _error_lines(capsys)
        assert len(lines) == 1
        assert lines[0].startswith('adpf-error kind=config type=ConfigError')
        assert '--params' in lines[0]

    def test_cfl_violation(self, corpus, tmp_path, capsys):
        code = main(['forward', '--params', str(corpus / 'sample_0000' / 'params'),
                     '--init', str(corpus / 'init.adpf'), '--dt', '1', '--substep', '1',
                     '--n-frames', '2', '--out', str(tmp_path)])
        assert code == 3
        lines = _error_lines(capsys)
        assert len(lines) == 1
        assert 'kind=numerical type=CFLViolationError' in lines[0]

    def test_config_file(self, corpus, tmp_path):
        cfg = tmp_path / 'run.cfg'
        cfg.write_text(f"params = {corpus / 'sample_0000' / 'params'}\n"
                       f"init = {corpus / 'init.adpf'}\n"
                       "n-frames = 7\n", encoding='utf-8')
        code = main(['forward', '--config', str(cfg), '--n-frames', '3', '--out', str(tmp_path / 'out')])
        assert code == 0
        assert read_adpf(str(tmp_path / 'out' / 'series.adpf')).n_frames == 3


class TestMetrics:
    def test_identical_params(self, corpus, tmp_path):
        params = str(corpus / 'sample_0000' / 'params')
        report = tmp_path / 'report.csv'
        assert main(['metrics', '--pred', params, '--truth', params, '--report', str(report)]) == 0
        rows = {(r['target'], r['metric']): r for r in pd.read_csv(report).to_dict('records')}
        for target in ('V', 'V_bar', 'D', 'D_bar', 'A'):
            assert rows[(target, 'rae')]['value'] == 0.0
        # sigma = 0 везде: RAE не определена
        assert np.isnan(rows[('sigma', 'rae')]['value'])
        assert isinstance(rows[('sigma', 'rae')]['note'], str)

    def test_unbalanced_inputs(self, corpus, tmp_path, capsys):
        params = str(corpus / 'sample_0000' / 'params')
        code = main(['metrics', '--pred', params, '--report', str(tmp_path / 'report.csv')])
        assert code == 2
        assert len(_error_lines(capsys)) == 1


class TestExportPlot:
    def test_frames(self, corpus, tmp_path):
        series_path = str(corpus / 'sample_0000' / 'series.adpf')
        assert main(['export-plot', '--series', series_path, '--frames', '0,2', '--out', str(tmp_path)]) == 0
        series = read_adpf(series_path)
        for index in (0, 2):
            assert np.array_equal(read_grid_csv(str(tmp_path / f'frame_{index:04d}.csv')), series.data[index])
            assert (tmp_path / f'frame_{index:04d}.pgm').exists()

    def test_frame_out_of_range(self, corpus, tmp_path):
        series_path = str(corpus / 'sample_0000' / 'series.adpf')
        assert main(['export-plot', '--series', series_path, '--frames', '9', '--out', str(tmp_path)]) == 2

    def test_volume_exports_middle_slice(self, tmp_path, rng):
        grid = Grid((4, 5, 6), (1.0, 1.0, 1.0))
        series_path = str(tmp_path / 'volume.adpf')
        write_adpf(TimeSeries(grid, 0.01, rng.uniform(0, 1, (2,) + grid.shape)), series_path)
        out = tmp_path / 'plots'
        assert main(['export-plot', '--series', series_path, '--frames', '1', '--out', str(out)]) == 0
        series = read_adpf(series_path)
        assert np.array_equal(read_grid_csv(str(out / 'frame_0001.csv')), series.data[1][..., 3])
        with Image.open(out / 'frame_0001.pgm') as image:
            assert image.size == (5, 4)

    def test_parameter_maps(self, corpus, tmp_path):
        assert main(['export-plot', '--params', str(corpus / 'sample_0000' / 'params'), '--out', str(tmp_path)]) == 0
        for name in ('vmag', 'trace', 'fa', 'sigma', 'a'):
            assert (tmp_path / f'map_{name}.csv').exists(), name


class TestInvertAndWellposed:
    def test_invert_from_truth(self, corpus, tmp_path):
        sample = corpus / 'sample_0000'
        out = tmp_path / 'fit'
        code = main(['invert', '--series', str(sample / 'series.adpf'), '--init', str(sample / 'params'),
                     '--n-in', '3', '--n-out', '2', '--max-iters', '0', '--w-ss', '0', '--no-grad-check',
                     '--out', str(out)])
        assert code == 0
        log = pd.read_csv(out / 'fit_log.csv')
        assert list(log.columns) == ['iteration', 'loss', 'grad_norm']
        assert log['loss'].iloc[0] <= 1e-8
        estimate = load_params(str(out))
        assert estimate.grid.shape == (64, 64)
        manifest = (out / 'manifest.txt').read_text().splitlines()
        assert 'result_sigma_active=false' in manifest
        assert 'result_warm_start_loss=none' in manifest
        assert 'warm_start_iters=100' in manifest

    def test_wellposed(self, corpus, tmp_path):
        assert main(['wellposed', '--params', str(corpus / 'sample_0000' / 'params'), '--out', str(tmp_path)]) == 0
        table = pd.read_csv(tmp_path / 'wellposedness.csv')
        assert list(table.columns) == ['constant', 'value']
        assert (table['value'] >= 0).all()
