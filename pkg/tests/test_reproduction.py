"""桌面规模的复现实验 (默认不运行: pytest -m slow)"""

import os

import numpy as np
import pytest

from src.artifacts import METRICS_FILE, read_metrics_csv
from src.harness import run_experiment, target_config
from src.validators import validate_run_config

pytestmark = pytest.mark.slow


@pytest.fixture
def base_config():
    return validate_run_config({'TASK_SPACE': {}, 'SEEDS': [0, 1, 2]})


def _gated_ratio(run_dir):
    rows = read_metrics_csv(os.path.join(run_dir, METRICS_FILE))
    explorer = [r.value for r in rows if r.metric.startswith('explorer') and r.metric.endswith('_gated_visits')]
    uniform = [r.value for r in rows if r.metric == 'uniform_gated_visits']
    return float(np.mean(explorer)) / max(float(np.mean(uniform)), 1e-12)


def test_one_step_climb(base_config, tmp_path):
    cfg = target_config('one-step-climb', base_config)
    result = run_experiment(cfg, 'reproduce', out_dir=str(tmp_path))
    assert result['summary']['vanilla']['mean'] <= 0.60
    assert result['summary']['mesa']['mean'] >= 0.75
    assert _gated_ratio(result['run_dir']) >= 5.0


def test_multi_stage_climb(base_config, tmp_path):
    cfg = target_config('multi-stage-climb', base_config)
    result = run_experiment(cfg, 'reproduce', out_dir=str(tmp_path))
    assert result['summary']['vanilla']['mean'] <= 0.60
    assert result['summary']['mesa']['mean'] >= 0.70


def test_particle_climb_exploration(base_config, tmp_path):
    cfg = target_config('particle-climb', base_config)
    result = run_experiment(cfg, 'ablate', out_dir=str(tmp_path))
    assert set(result['summary']) == {'vanilla', 'buffer-init', 'mesa'}
    means = [result['summary'][arm]['mean'] for arm in ('vanilla', 'buffer-init', 'mesa')]
    assert means == sorted(means)
    assert _gated_ratio(result['run_dir']) >= 5.0
