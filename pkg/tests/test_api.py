"""JSON 接口与 HTTP 服务"""

import json

import pytest
from fastapi.testclient import TestClient

from src import server
from src.api import list_run_results, run_experiment_json


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr(server, 'RESULTS_DIR', str(tmp_path))
    return TestClient(server.app)


class TestRunExperimentJson:

    def test_malformed_json(self, tmp_path):
        result = json.loads(run_experiment_json('{"TASK_SPACE": ', 'theory', out_dir=str(tmp_path)))
        assert result['status'] == 'error'
        assert result['error_type'] == 'ValidationError'

    def test_unknown_key(self, tmp_path):
        config = json.dumps({'TASK_SPACE': {}, 'LEARNER': {'GAMM': 0.9}})
        result = json.loads(run_experiment_json(config, 'reproduce', out_dir=str(tmp_path)))
        assert result['error_type'] == 'ValidationError'
        assert 'LEARNER.GAMM' in result['message']

    def test_unknown_subcommand(self, tmp_path, tiny_config_dict):
        result = json.loads(run_experiment_json(json.dumps(tiny_config_dict), 'train', out_dir=str(tmp_path)))
        assert result['error_type'] == 'InvalidArgumentError'

    def test_theory_run_is_saved(self, tmp_path, tiny_config_dict):
        result = json.loads(run_experiment_json(json.dumps(tiny_config_dict), 'theory', out_dir=str(tmp_path)))
        assert result['status'] == 'success'
        assert result['data']['agreement'] == 1.0
        saved = list_run_results(str(tmp_path))
        assert len(saved) == 1
        assert saved[0]['filename'].startswith('run_theory_')
        assert saved[0]['data'] == result

    def test_missing_results_dir(self, tmp_path):
        assert list_run_results(str(tmp_path / 'absent')) == []


class TestServer:

    def test_health(self, client):
        assert client.get('/health').json() == {'status': 'ok'}

    def test_unknown_subcommand(self, client):
        response = client.post('/experiments/train', json={'config_json': '{}'})
        assert response.status_code == 404

    def test_invalid_config(self, client):
        response = client.post('/experiments/reproduce', json={'config_json': '{"SEEDS": [0]}'})
        assert response.status_code == 400
        assert response.json()['detail']['error_type'] == 'ValidationError'

    def test_summary_lookup(self, client, tmp_path):
        run = tmp_path / 'tiny-reproduce'
        run.mkdir()
        (run / 'summary.json').write_text(json.dumps({'mesa': {'mean': 1.0}}), encoding='utf-8')
        assert client.get('/api/result/tiny-reproduce/summary').json() == {'mesa': {'mean': 1.0}}
        assert client.get('/api/result/missing/summary').status_code == 404

    def test_results_listing(self, client):
        assert client.get('/api/results').json() == []
