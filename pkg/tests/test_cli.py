"""
Test cases for the command-line workflows.
"""
import json
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from app import create_cli

SMOKE_CONFIG = {
    'preprocess': {'target_height': 64, 'target_width': 64},
    'backbone': {'name': 'tiny_test_cnn', 'weights_source': 'random'},
    'head': {'conv_filters': 16, 'dense_units': 32, 'dropout_rate': 0.1},
    'train': {'epochs': 2, 'batch_size': 8, 'freeze_policy': 'train_all', 'seed': 42},
    'split': {'fractions': [0.7, 0.2, 0.1], 'seed': 42},
    'lime': {'n_segments_target': 16, 'n_samples': 120, 'top_k': 3, 'seed': 42},
}


@pytest.fixture
def cli():
    """Create test command group."""
    return create_cli('testing')


@pytest.fixture
def runner():
    """Create test runner."""
    return CliRunner()


@pytest.fixture
def workspace(tmp_path, runner, cli) -> Path:
    """Synthetic dataset plus a smoke config under one temporary directory."""
    result = runner.invoke(cli, ['make-synthetic', '--out-dir', str(tmp_path / 'data'), '--seed', '0'])
    assert result.exit_code == 0, result.output
    (tmp_path / 'smoke.json').write_text(json.dumps(SMOKE_CONFIG))
    return tmp_path


def snapshot(directory: Path, suffixes=('.csv', '.json')) -> dict:
    return {
        path.relative_to(directory): path.read_bytes()
        for path in sorted(directory.rglob('*'))
        if path.is_file() and path.suffix in suffixes
    }


class TestPipelineCommands:
    """Test the end-to-end workflow."""

    def test_full_workflow(self, workspace, runner, cli):
        """Test make-synthetic, analyze, train, evaluate, explain and compare."""
        data = workspace / 'data'
        config = workspace / 'smoke.json'
        run = workspace / 'run'
        image = sorted((data / 'unhealthy').glob('*.png'))[0]

        steps = [
            ['analyze', '--data-dir', str(data), '--out-dir', str(workspace / 'analysis')],
            ['train', '--config', str(config), '--data-dir', str(data), '--out-dir', str(run)],
            ['evaluate', '--checkpoint', str(run / 'checkpoint'), '--out-dir', str(run), '--split', 'test'],
            ['explain', '--checkpoint', str(run / 'checkpoint'), '--config', str(config), '--image', str(image),
             '--method', 'lime', '--out-dir', str(workspace / 'explain')],
            ['explain', '--checkpoint', str(run / 'checkpoint'), '--image', str(image),
             '--method', 'saliency', '--out-dir', str(workspace / 'explain')],
            ['compare', str(run / 'metrics_test.json'), '--out-dir', str(workspace / 'compare')],
        ]
        for args in steps:
            result = runner.invoke(cli, args)
            assert result.exit_code == 0, f"{args[0]}: {result.output}"

        analysis = workspace / 'analysis'
        for name in ('manifest.csv', 'class_distribution.png', 'intensity_histograms.png', 'stats.json',
                     'histogram_healthy.csv', 'histogram_unhealthy.csv', 'effective_config.json'):
            assert (analysis / name).exists(), name
        stats = json.loads((analysis / 'stats.json').read_text())
        assert stats['counts'] == {'Healthy': 16, 'Unhealthy': 16}
        assert len(pd.read_csv(analysis / 'manifest.csv')) == 32

        for name in ('checkpoint/weights.pt', 'checkpoint/model.json', 'history.csv', 'training_curves.png',
                     'effective_config.json', 'metrics_test.json', 'roc_test.png'):
            assert (run / name).exists(), name
        assert len(pd.read_csv(run / 'history.csv')) == 2
        effective = json.loads((run / 'effective_config.json').read_text())
        assert effective['paths']['data_dir'] == str(data)

        metrics = json.loads((run / 'metrics_test.json').read_text())
        assert set(metrics) >= {'accuracy', 'precision', 'recall', 'f1', 'auc', 'threshold', 'n', 'confusion'}
        assert metrics['n'] == 4

        explanation = json.loads((workspace / 'explain' / 'explanation_lime.json').read_text())
        assert len(explanation['weights']) == explanation['n_segments']
        assert (workspace / 'explain' / 'overlay_lime.png').exists()
        saliency = json.loads((workspace / 'explain' / 'explanation_saliency.json').read_text())
        assert 0.0 <= saliency['stats']['min'] <= saliency['stats']['max'] <= 1.0
        assert (workspace / 'compare' / 'comparison.csv').exists()

    def test_reruns_are_byte_identical(self, workspace, runner, cli):
        """Test CSV and JSON artifacts do not change on a rerun."""
        data = workspace / 'data'
        run = workspace / 'run'
        commands = [
            ['analyze', '--data-dir', str(data), '--out-dir', str(workspace / 'analysis')],
            ['train', '--config', str(workspace / 'smoke.json'), '--data-dir', str(data), '--out-dir', str(run)],
            ['evaluate', '--checkpoint', str(run / 'checkpoint'), '--out-dir', str(run), '--split', 'all'],
        ]
        snapshots = []
        for _ in range(2):
            for args in commands:
                result = runner.invoke(cli, args)
                assert result.exit_code == 0, result.output
            snapshots.append({**snapshot(workspace / 'analysis'), **{('run', k): v for k, v in snapshot(run).items()}})

        assert snapshots[0] == snapshots[1]

    def test_predict_unlabeled_directory(self, workspace, runner, cli):
        """Test predictions for every image below a directory."""
        data = workspace / 'data'
        run = workspace / 'run'
        trained = runner.invoke(cli, ['train', '--config', str(workspace / 'smoke.json'), '--data-dir', str(data),
                                      '--out-dir', str(run), '--epochs', '1'])
        assert trained.exit_code == 0, trained.output

        result = runner.invoke(cli, ['predict', '--checkpoint', str(run / 'checkpoint'),
                                     '--data-dir', str(data / 'healthy'), '--out-dir', str(run)])

        assert result.exit_code == 0, result.output
        frame = pd.read_csv(run / 'predictions.csv')
        assert len(frame) == 16
        assert set(frame['predicted_label']) <= {0, 1}

    def test_predict_keeps_a_row_for_corrupt_files(self, workspace, runner, cli):
        """Test a corrupt frame is listed with its error instead of dropped."""
        data = workspace / 'data'
        run = workspace / 'run'
        trained = runner.invoke(cli, ['train', '--config', str(workspace / 'smoke.json'), '--data-dir', str(data),
                                      '--out-dir', str(run), '--epochs', '1'])
        assert trained.exit_code == 0, trained.output
        (data / 'healthy' / 'zz_broken.png').write_bytes(b'not an image')

        result = runner.invoke(cli, ['predict', '--checkpoint', str(run / 'checkpoint'),
                                     '--data-dir', str(data / 'healthy'), '--out-dir', str(run)])

        assert result.exit_code == 0, result.output
        assert '1 unreadable' in result.output
        frame = pd.read_csv(run / 'predictions.csv')
        assert len(frame) == 17
        broken = frame[frame['path'].str.endswith('zz_broken.png')]
        assert len(broken) == 1
        assert broken['probability'].isna().all()
        assert broken['error'].notna().all()

    def test_evaluate_and_predict_echo_their_config(self, workspace, runner, cli):
        """Test --config and --seed on evaluate and predict, echoed without touching the training echo."""
        data = workspace / 'data'
        run = workspace / 'run'
        config = str(workspace / 'smoke.json')
        trained = runner.invoke(cli, ['train', '--config', config, '--data-dir', str(data),
                                      '--out-dir', str(run), '--epochs', '1'])
        assert trained.exit_code == 0, trained.output

        evaluated = runner.invoke(cli, ['evaluate', '--checkpoint', str(run / 'checkpoint'), '--config', config,
                                        '--seed', '7', '--split', 'all'])
        predicted = runner.invoke(cli, ['predict', '--checkpoint', str(run / 'checkpoint'), '--config', config,
                                        '--seed', '7', '--data-dir', str(data / 'unhealthy')])

        assert evaluated.exit_code == 0, evaluated.output
        assert predicted.exit_code == 0, predicted.output
        echo = json.loads((run / 'effective_config_evaluate.json').read_text())
        assert echo['train']['seed'] == 7
        assert echo['paths']['data_dir'] == str(data)
        assert echo['paths']['checkpoint'] == str(run / 'checkpoint')
        assert (run / 'metrics_all.json').exists()
        echo = json.loads((run / 'effective_config_predict.json').read_text())
        assert echo['paths']['data_dir'] == str(data / 'unhealthy')
        assert echo['lime']['seed'] == 7
        training_echo = json.loads((run / 'effective_config.json').read_text())
        assert training_echo['train']['seed'] == 42

    def test_benchmark_writes_timings(self, workspace, runner, cli):
        """Test timing.json with training, inference and explanation timings."""
        data = workspace / 'data'
        run = workspace / 'run'
        config = str(workspace / 'smoke.json')
        trained = runner.invoke(cli, ['train', '--config', config, '--data-dir', str(data),
                                      '--out-dir', str(run), '--epochs', '1'])
        assert trained.exit_code == 0, trained.output

        result = runner.invoke(cli, ['benchmark', '--checkpoint', str(run / 'checkpoint'), '--config', config,
                                     '--data-dir', str(data), '--out-dir', str(workspace / 'bench'),
                                     '--sample-size', '4', '--with-explanation', '--hardware-note', 'ci'])

        assert result.exit_code == 0, result.output
        timing = json.loads((workspace / 'bench' / 'timing.json').read_text())
        assert timing['train_seconds_per_epoch'] > 0
        assert timing['inference_seconds_per_image'] > 0
        assert timing['explanation_seconds_per_image'] > 0
        assert timing['n_images'] == 4
        assert timing['hardware_note'] == 'ci'

    def test_threshold_monotonicity(self, workspace, runner, cli):
        """Test recall at threshold 0.9 never exceeds recall at 0.5."""
        data = workspace / 'data'
        run = workspace / 'run'
        assert runner.invoke(cli, ['train', '--config', str(workspace / 'smoke.json'), '--data-dir', str(data),
                                   '--out-dir', str(run)]).exit_code == 0
        recalls = []
        for threshold in ('0.5', '0.9'):
            out = workspace / f"eval-{threshold}"
            result = runner.invoke(cli, ['evaluate', '--checkpoint', str(run / 'checkpoint'), '--split', 'all',
                                         '--threshold', threshold, '--out-dir', str(out)])
            assert result.exit_code == 0, result.output
            recalls.append(json.loads((out / 'metrics_all.json').read_text())['recall'])

        assert recalls[1] <= recalls[0]


class TestCommandErrors:
    """Test exit codes and error messages."""

    def test_analyze_empty_directory(self, tmp_path, runner, cli):
        """Test exit 2 with a clear message for an empty dataset."""
        (tmp_path / 'data' / 'healthy').mkdir(parents=True)
        result = runner.invoke(cli, ['analyze', '--data-dir', str(tmp_path / 'data'), '--out-dir', str(tmp_path / 'out')])

        assert result.exit_code == 2
        assert 'no images found' in result.output

    def test_invalid_dropout_names_the_key(self, workspace, runner, cli):
        """Test a schema violation reports its JSON path."""
        bad = dict(SMOKE_CONFIG, head={'dropout_rate': 1.5})
        (workspace / 'bad.json').write_text(json.dumps(bad))

        result = runner.invoke(cli, ['train', '--config', str(workspace / 'bad.json'),
                                     '--data-dir', str(workspace / 'data'), '--out-dir', str(workspace / 'run')])

        assert result.exit_code == 2
        assert 'head.dropout_rate' in result.output

    def test_unknown_config_key(self, workspace, runner, cli):
        """Test unknown keys are rejected."""
        (workspace / 'bad.json').write_text(json.dumps({'train': {'epoch': 3}}))
        result = runner.invoke(cli, ['train', '--config', str(workspace / 'bad.json'),
                                     '--data-dir', str(workspace / 'data'), '--out-dir', str(workspace / 'run')])

        assert result.exit_code == 2
        assert 'train.epoch' in result.output

    def test_evaluate_missing_checkpoint(self, tmp_path, runner, cli):
        """Test evaluating a checkpoint that does not exist."""
        result = runner.invoke(cli, ['evaluate', '--checkpoint', str(tmp_path / 'nothing'),
                                     '--data-dir', str(tmp_path)])
        assert result.exit_code == 2

    def test_unknown_explain_method(self, tmp_path, runner, cli):
        """Test an unsupported explanation method."""
        result = runner.invoke(cli, ['explain', '--checkpoint', str(tmp_path), '--image', str(tmp_path / 'x.png'),
                                     '--method', 'gradcam'])
        assert result.exit_code == 2

    def test_compare_malformed_json(self, tmp_path, runner, cli):
        """Test a broken metrics file is named in the error."""
        broken = tmp_path / 'broken_metrics.json'
        broken.write_text('{"accuracy": 0.9,')
        result = runner.invoke(cli, ['compare', str(broken), '--out-dir', str(tmp_path / 'out')])

        assert result.exit_code == 2
        assert 'broken_metrics.json' in result.output

    def test_compare_published_rows(self, tmp_path, runner, cli):
        """Test four published summaries rank InceptionV3 first."""
        rows = {
            'EfficientNetB7': (0.7146, 0.7648, 0.8518),
            'RadImagenet-DenseNet': (0.7746, 0.8424, 0.8892),
            'InceptionV3': (0.9052, 0.9001, 0.9716),
            'ResNet101': (0.8146, 0.9024, 0.9492),
        }
        files = []
        for name, (accuracy, precision, recall) in rows.items():
            path = tmp_path / f"{name}.json"
            path.write_text(json.dumps({'model': name, 'accuracy': accuracy, 'precision': precision, 'recall': recall}))
            files.append(str(path))

        result = runner.invoke(cli, ['compare', *files, '--out-dir', str(tmp_path / 'out')])

        assert result.exit_code == 0, result.output
        assert 'selected: InceptionV3' in result.output
        frame = pd.read_csv(tmp_path / 'out' / 'comparison.csv')
        assert frame['model'].tolist() == ['InceptionV3', 'ResNet101', 'RadImagenet-DenseNet', 'EfficientNetB7']

    def test_help_lists_flags(self, runner, cli):
        """Test --help enumerates the shared flags."""
        result = runner.invoke(cli, ['train', '--help'])

        assert result.exit_code == 0
        for flag in ('--config', '--data-dir', '--out-dir', '--seed', '--backbone', '--epochs', '--batch-size'):
            assert flag in result.output

    @pytest.mark.parametrize('command', ['evaluate', 'predict', 'explain'])
    def test_checkpoint_commands_share_config_flags(self, runner, cli, command):
        """Test commands that load a checkpoint accept --config and --seed too."""
        result = runner.invoke(cli, [command, '--help'])

        assert result.exit_code == 0
        for flag in ('--config', '--seed', '--checkpoint', '--out-dir'):
            assert flag in result.output
