"""指标文件、汇总表、学习曲线与轨迹导出"""

import csv
import json
import os

import numpy as np
import pytest

from conftest import make_transition
from src.artifacts import (
    CURVE_PLOT, METRICS_FILE, SUMMARY_JSON, SUMMARY_TEXT, emit_artifacts, export_trajectory_csv,
    final_returns, read_metrics_csv, summarize, write_metrics_csv,
)
from src.climb_games import ClimbGameEnv
from src.models import MetricsRow, Trajectory
from src.particle_climb import ParticleClimbEnv
from src.exceptions import ArtifactError


def _rows():
    rows = []
    finals = {('mesa', 0): 1.0, ('mesa', 1): 0.5, ('vanilla', 0): 0.5, ('vanilla', 1): 0.5}
    for (arm, seed), final in finals.items():
        rows.append(MetricsRow(arm, seed, 'meta-test', 100, 'greedy_return', 0.0))
        rows.append(MetricsRow(arm, seed, 'meta-test', 200, 'greedy_return', final))
    rows.append(MetricsRow('mesa', 0, 'harvest', 200, 'task0_mean_return', 0.3))
    return rows


@pytest.fixture
def metrics_dir(tmp_path):
    write_metrics_csv(str(tmp_path / METRICS_FILE), _rows())
    return str(tmp_path)


class TestMetrics:

    def test_rows_are_sorted(self, metrics_dir):
        rows = read_metrics_csv(os.path.join(metrics_dir, METRICS_FILE))
        keys = [(r.run_id, r.seed) for r in rows]
        assert keys == sorted(keys)
        assert rows[0].phase == 'harvest'

    def test_final_returns_take_last_step(self):
        assert final_returns(_rows()) == {'mesa': {0: 1.0, 1: 0.5}, 'vanilla': {0: 0.5, 1: 0.5}}

    def test_population_std(self):
        summary = summarize(_rows())
        assert summary['mesa']['mean'] == pytest.approx(0.75)
        assert summary['mesa']['std'] == pytest.approx(0.25)
        assert summary['vanilla']['std'] == 0.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError) as info:
            read_metrics_csv(str(tmp_path / METRICS_FILE))
        assert info.value.details['reason'] == 'missing'

    def test_bad_header(self, tmp_path):
        path = tmp_path / METRICS_FILE
        path.write_text('a,b\n1,2\n', encoding='utf-8')
        with pytest.raises(ArtifactError):
            read_metrics_csv(str(path))


class TestEmit:

    def test_writes_every_artifact(self, metrics_dir):
        summary = emit_artifacts(metrics_dir, title='tiny')
        for name in (CURVE_PLOT, SUMMARY_TEXT, SUMMARY_JSON):
            assert os.path.isfile(os.path.join(metrics_dir, name))
        with open(os.path.join(metrics_dir, SUMMARY_JSON), encoding='utf-8') as f:
            stored = json.load(f)
        assert stored == summary
        with open(os.path.join(metrics_dir, SUMMARY_TEXT), encoding='utf-8') as f:
            text = f.read()
        assert 'mesa' in text and 'vanilla' in text

    def test_summary_matches_metrics(self, metrics_dir):
        emit_artifacts(metrics_dir)
        with open(os.path.join(metrics_dir, SUMMARY_JSON), encoding='utf-8') as f:
            stored = json.load(f)
        for arm, per_seed in final_returns(read_metrics_csv(os.path.join(metrics_dir, METRICS_FILE))).items():
            values = np.array(list(per_seed.values()))
            assert stored[arm]['mean'] == pytest.approx(values.mean(), abs=1e-9)
            assert stored[arm]['std'] == pytest.approx(values.std(), abs=1e-9)

    def test_svg_is_byte_stable(self, metrics_dir):
        emit_artifacts(metrics_dir)
        with open(os.path.join(metrics_dir, CURVE_PLOT), 'rb') as f:
            first = f.read()
        emit_artifacts(metrics_dir)
        with open(os.path.join(metrics_dir, CURVE_PLOT), 'rb') as f:
            assert f.read() == first

    def test_empty_metrics(self, tmp_path):
        write_metrics_csv(str(tmp_path / METRICS_FILE), [])
        with pytest.raises(ArtifactError):
            emit_artifacts(str(tmp_path))

    def test_no_meta_test_rows(self, tmp_path):
        write_metrics_csv(str(tmp_path / METRICS_FILE), [MetricsRow('mesa', 0, 'harvest', 1, 'x', 1.0)])
        with pytest.raises(ArtifactError):
            emit_artifacts(str(tmp_path))

    def test_missing_run_dir(self, tmp_path):
        with pytest.raises(ArtifactError):
            emit_artifacts(str(tmp_path / 'nowhere'))


def _read_csv(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


class TestTrajectoryExport:

    def test_discrete_columns(self, tmp_path, one_step_spec):
        env = ClimbGameEnv(one_step_spec)
        traj = Trajectory([make_transition([0.0], [2, 1], 0.5, shaped_reward=0.25)])
        rows = _read_csv(export_trajectory_csv(str(tmp_path / 'explorer0.csv'), traj, env))
        assert list(rows[0]) == ['t', 'a0', 'a1', 'reward', 'shaped_reward', 'source']
        assert (rows[0]['a0'], rows[0]['a1'], rows[0]['source']) == ('2', '1', 'learner')

    def test_particle_columns(self, tmp_path, particle_spec):
        env = ParticleClimbEnv(particle_spec)
        state, _ = env.reset(np.random.default_rng(0))
        traj = Trajectory([make_transition(state, np.full((2, 2), 0.5), 0.0)])
        rows = _read_csv(export_trajectory_csv(str(tmp_path / 'explorer0.csv'), traj, env))
        assert list(rows[0])[:7] == ['t', 'p0x', 'p0y', 'v0x', 'v0y', 'f0x', 'f0y']
        assert float(rows[0]['f1y']) == 0.5
        assert float(rows[0]['p0x']) == pytest.approx(state[0] * env.cfg.ARENA_HALFWIDTH)
