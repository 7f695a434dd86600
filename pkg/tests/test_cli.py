import io
import json
import math
from pathlib import Path

import numpy as np
import pytest

from main import build_parser, build_run_config, main
from src.artifact_writer import ArtifactWriter
from src.config_loader import THREADS_ENV, ConfigLoader
from src.errors import ConvergenceError, DomainError
from src.moment_integrator import MomentIntegrator


DATA = Path(__file__).parent / 'data'


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def as_frame(text):
    return ArtifactWriter.read_csv(io.StringIO(text))


class TestSimulate:
    def test_exact_csv(self, capsys):
        code, out, _ = run_cli(capsys, 'simulate', '--n-excited', '10', '--tau-max', '1.0', '--samples', '11')
        assert code == 0
        assert out.splitlines()[0] == 'tau,mean_ne,delta_e'
        assert '\r' not in out
        frame = as_frame(out)
        assert len(frame) == 11
        assert frame['mean_ne'].iloc[0] == pytest.approx(10.0, abs=1e-12)
        assert frame['tau'].iloc[-1] == 1.0

    def test_defaults_from_config(self, capsys):
        code, out, _ = run_cli(capsys, 'simulate', '--n-excited', '3')
        assert code == 0
        assert len(as_frame(out)) == 2000

    def test_closed_form_json(self, capsys):
        code, out, _ = run_cli(capsys, 'simulate', '--n-excited', '100', '--method', 'closed_form',
                               '--tau-max', '0.7', '--samples', '101', '--format', 'json')
        assert code == 0
        report = json.loads(out)
        assert report['command'] == 'simulate'
        assert report['charges']['c_bar'] == 19900.0
        assert report['provenance']['method'] == 'closed_form'
        assert 45.0 <= min(report['data']['mean_ne']) <= 55.0

    def test_seconds_column(self, capsys):
        code, out, _ = run_cli(capsys, 'simulate', '--n-excited', '1', '--tau-max', '2.0', '--samples', '5',
                               '--rabi-hz', '1000')
        assert code == 0
        frame = as_frame(out)
        assert list(frame.columns) == ['tau', 'time_s', 'mean_ne', 'delta_e']
        assert frame['time_s'].iloc[-1] == pytest.approx(2.0 / (2.0 * math.pi * 1000.0), rel=1e-15)

    def test_closed_form_below_minimum_n_fails(self, capsys):
        code, out, _ = run_cli(capsys, 'simulate', '--n-excited', '2', '--method', 'closed_form',
                               '--samples', '5')
        assert code == 1
        assert out == ''

    def test_matches_golden_single_atom(self, capsys):
        # one atom: N = cos^2 tau and Delta = |sin tau cos tau|
        code, out, _ = run_cli(capsys, 'simulate', '--n-excited', '1', '--tau-max', '2', '--samples', '9')
        assert code == 0
        golden_path = DATA / 'simulate_n1.csv'
        assert out.splitlines()[0] == golden_path.read_text().splitlines()[0]
        frame, golden = as_frame(out), ArtifactWriter.read_csv(golden_path)
        np.testing.assert_array_equal(frame['tau'], golden['tau'])
        np.testing.assert_allclose(frame[['mean_ne', 'delta_e']], golden[['mean_ne', 'delta_e']], atol=1e-12)

    def test_csv_reads_back_to_same_bytes(self):
        text = (DATA / 'simulate_n1.csv').read_text()
        writer = ArtifactWriter()
        assert writer.csv_text(ArtifactWriter.read_csv(DATA / 'simulate_n1.csv')) == text

    def test_unreadable_csv(self, tmp_path):
        with pytest.raises(DomainError):
            ArtifactWriter.read_csv(tmp_path / 'missing.csv')

    def test_writes_file(self, capsys, tmp_path):
        target = tmp_path / 'out' / 'traj.csv'
        code, out, _ = run_cli(capsys, 'simulate', '--n-excited', '4', '--samples', '7', '--output', str(target))
        assert code == 0
        assert out == ''
        assert target.read_bytes().startswith(b'tau,mean_ne,delta_e\n')


class TestUsageErrors:
    @pytest.mark.parametrize('argv', [
        ['simulate', '--n-excited', 'many'],
        ['simulate', '--method', 'euler', '--n-excited', '3'],
        ['transmogrify'],
        [],
    ])
    def test_parser_errors(self, capsys, argv):
        code, _, _ = run_cli(capsys, *argv)
        assert code == 2

    @pytest.mark.parametrize('argv', [
        ['simulate'],
        ['compare'],
        ['ensemble'],
        ['predict'],
        ['simulate', '--n-excited', '3', '--samples', '1'],
        ['simulate', '--n-excited', '3', '--tau-max', '-1'],
        ['simulate', '--n-excited', '-3'],
        ['simulate', '--n-excited', '0'],
        ['compare', '--n-excited', '0', '--n-ground', '0'],
    ])
    def test_invalid_values(self, capsys, argv):
        code, _, err = run_cli(capsys, *argv)
        assert code == 2
        assert 'usage:' in err

    def test_invalid_thread_count(self, capsys, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, 'lots')
        code, _, _ = run_cli(capsys, 'ensemble', '--nbar', '20', '--tau-max', '1')
        assert code == 2


class TestPredict:
    def test_json(self, capsys):
        code, out, _ = run_cli(capsys, 'predict', '--nbar', '100', '--format', 'json')
        assert code == 0
        report = json.loads(out)
        assert report['t_period'] == pytest.approx(0.6619, abs=1e-4)
        assert report['t_revival'] == pytest.approx(190.8, abs=0.05)
        assert report['plateau'] == pytest.approx(85.04, abs=0.005)
        assert report['fractional']['2'] == pytest.approx(95.4, abs=0.05)
        assert report['provenance']['solver'] in ('newton', 'scan+newton')

    def test_csv_is_one_row(self, capsys):
        code, out, _ = run_cli(capsys, 'predict', '--n-excited', '50', '--format', 'csv')
        assert code == 0
        frame = as_frame(out)
        assert len(frame) == 1
        assert {'t_period', 't_revival', 't_revival_2', 't_revival_5', 'plateau'} <= set(frame.columns)

    def test_seconds(self, capsys):
        code, out, _ = run_cli(capsys, 'predict', '--nbar', '100', '--rabi-hz', '50', '--format', 'json')
        assert code == 0
        report = json.loads(out)
        assert report['t_revival_s'] == pytest.approx(report['t_revival'] / (2.0 * math.pi * 50.0))

    def test_json_by_default(self, capsys):
        code, out, _ = run_cli(capsys, 'predict', '--nbar', '100')
        assert code == 0
        report = json.loads(out)
        assert report['t_revival'] == pytest.approx(190.8, abs=0.05)

    def test_run_file_can_ask_for_csv(self, capsys, tmp_path):
        run_file = tmp_path / 'run.yaml'
        run_file.write_text('nbar: 100\noutput_format: csv\n')
        code, out, _ = run_cli(capsys, 'predict', '--config', str(run_file))
        assert code == 0
        assert len(as_frame(out)) == 1

    def test_small_nbar_is_a_numerical_failure(self, capsys, caplog):
        code, out, _ = run_cli(capsys, 'predict', '--nbar', '2')
        assert code == 1
        assert out == ''
        assert '[closedform]' in caplog.text


class TestCompare:
    def test_columns_and_dips(self, capsys):
        code, out, _ = run_cli(capsys, 'compare', '--n-excited', '100', '--tau-max', '0.9', '--samples', '901')
        assert code == 0
        frame = as_frame(out)
        assert list(frame.columns[:5]) == ['tau', 'exact', 'vanishing_variance', 'vanishing_asymmetry',
                                           'closed_form']
        assert frame['vanishing_variance'].min() < 5.0
        assert frame['vanishing_variance'].min() < frame['closed_form'].min()
        assert 45.0 <= frame['closed_form'].min() <= 55.0

    def test_full_default_window_has_every_column(self, capsys):
        code, out, _ = run_cli(capsys, 'compare', '--n-excited', '100', '--tau-max', '2')
        assert code == 0
        frame = as_frame(out)
        assert len(frame) == 2000
        assert int(frame.isna().sum().sum()) == 0
        assert frame['vanishing_asymmetry'].between(0.0, 110.0).all()

    def test_closure_failure_exits_one(self, capsys, caplog, monkeypatch):
        def diverge(self, charges, n0, tau_grid):
            raise ConvergenceError("vanishing_asymmetry integration failed at tau=1.85", module='moments')
        monkeypatch.setattr(MomentIntegrator, 'vanishing_asymmetry_trajectory', diverge)
        code, out, _ = run_cli(capsys, 'compare', '--n-excited', '30', '--tau-max', '0.5', '--samples', '51')
        assert code == 1
        assert out == ''
        assert '[moments]' in caplog.text

    def test_unsupported_closed_form_leaves_blank_column(self, capsys):
        code, out, _ = run_cli(capsys, 'compare', '--n-excited', '30', '--n-ground', '1', '--tau-max', '0.5',
                               '--samples', '51', '--format', 'json')
        assert code == 0
        report = json.loads(out)
        assert set(report['unsupported']) == {'closed_form'}
        assert report['data']['closed_form'] == [None] * 51
        assert 'closed_form' not in report['metrics']

    def test_json_carries_metrics(self, capsys):
        code, out, _ = run_cli(capsys, 'compare', '--n-excited', '30', '--tau-max', '0.5', '--samples', '51',
                               '--format', 'json')
        assert code == 0
        report = json.loads(out)
        assert 'closed_form' in report['metrics']
        assert report['metrics']['closed_form']['max_deviation'] >= 0.0
        assert len(report['data']['exact']) == 51

    def test_bytes_are_reproducible(self, capsys, tmp_path):
        paths = [tmp_path / 'a.csv', tmp_path / 'b.csv']
        for path in paths:
            code, _, _ = run_cli(capsys, 'compare', '--n-excited', '30', '--tau-max', '0.8', '--samples', '101',
                                 '--output', str(path))
            assert code == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        text = paths[0].read_text()
        assert ArtifactWriter().csv_text(ArtifactWriter.read_csv(paths[0])) == text


class TestEnsemble:
    def test_bytes_are_reproducible(self, capsys, tmp_path):
        paths = [tmp_path / 'a.json', tmp_path / 'b.json']
        for path in paths:
            code, _, _ = run_cli(capsys, 'ensemble', '--nbar', '20', '--tau-max', '20', '--format', 'json',
                                 '--output', str(path))
            assert code == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        report = json.loads(paths[0].read_text())
        assert report['data']['mean_ne'][0] == pytest.approx(20.0, rel=1e-9)
        assert report['prediction']['n'] == 20.0
        assert set(report['revival_criterion']) == {'t_revival_numeric', 't_revival_formula'}
        assert report['provenance']['tail_mass'] < 1e-10

    @pytest.mark.slow
    def test_default_threshold_finds_half_revival(self, capsys):
        code, out, _ = run_cli(capsys, 'ensemble', '--nbar', '100', '--format', 'json')
        assert code == 0
        times = np.array([peak['tau'] for peak in json.loads(out)['revivals']])
        assert np.any(np.abs(times - 190.8) < 0.1 * 190.8)
        assert np.any(np.abs(times - 95.4) < 0.1 * 95.4)

    def test_truncation_failure(self, capsys, caplog):
        code, _, _ = run_cli(capsys, 'ensemble', '--nbar', '100', '--truncation-sigmas', '2', '--tau-max', '1')
        assert code == 1
        assert 'truncation_sigmas' in caplog.text


class TestRunConfig:
    def test_run_file_and_flag_priority(self, tmp_path):
        run_file = tmp_path / 'run.yaml'
        run_file.write_text('n_excited: 12\nsamples: 33\nmethod: vanishing_asymmetry\n')
        args = build_parser().parse_args(['simulate', '--config', str(run_file), '--samples', '44'])
        config = build_run_config(args, ConfigLoader())
        assert config.n_excited == 12
        assert config.method == 'vanishing_asymmetry'
        assert config.samples == 44
        assert config.tau_max == 2.0

    def test_run_file_drives_cli(self, capsys, tmp_path):
        run_file = tmp_path / 'run.yaml'
        run_file.write_text('n-excited: 6\ntau_max: 0.5\nsamples: 6\n')
        code, out, _ = run_cli(capsys, 'simulate', '--config', str(run_file))
        assert code == 0
        frame = as_frame(out)
        assert len(frame) == 6
        assert frame['mean_ne'].iloc[0] == pytest.approx(6.0, abs=1e-12)

    def test_unknown_run_file_key(self, capsys, tmp_path):
        run_file = tmp_path / 'run.yaml'
        run_file.write_text('n_excited: 6\ncolour: blue\n')
        code, _, err = run_cli(capsys, 'simulate', '--config', str(run_file))
        assert code == 2
        assert 'colour' in err

    def test_ensemble_grid_not_taken_from_defaults(self):
        args = build_parser().parse_args(['ensemble', '--nbar', '30'])
        config = build_run_config(args, ConfigLoader())
        assert config.tau_max is None and config.samples is None
