import pytest

from choquard.api import routes
from choquard.app import app


@pytest.fixture
def client():
    app.config['TESTING'] = True
    with app.test_client() as client:
        yield client


@pytest.fixture
def hls_body(tmp_path):
    return {'command': 'verify', 'verb': 'hls', 'n': 16, 'count': 3, 'seed': 1, 'out': str(tmp_path / 'run')}


def test_status(client):
    response = client.get('/status')
    assert response.status_code == 200
    assert response.get_json()['status'] == 'online'


def test_create_requires_command(client):
    response = client.post('/api/runs', json={'p': 2.2})
    assert response.status_code == 400


def test_create_lists_violations(client):
    response = client.post('/api/runs', json={'command': 'solve-ground', 'p': 5.0})
    assert response.status_code == 400
    body = response.get_json()
    assert body['violations']
    assert any('2.5' in v for v in body['violations'])


def test_unknown_run(client):
    assert client.get('/api/runs/missing').status_code == 404
    assert client.post('/api/runs/missing/start').status_code == 404
    assert client.get('/api/runs/missing/progress').status_code == 404
    assert client.get('/api/runs/missing/report').status_code == 404
    assert client.delete('/api/runs/missing').status_code == 404


def test_run_lifecycle(client, hls_body):
    response = client.post('/api/runs', json=hls_body)
    assert response.status_code == 201
    run_id = response.get_json()['run_id']

    assert client.get(f'/api/runs/{run_id}/report').status_code == 409
    assert client.get(f'/api/runs/{run_id}').get_json()['status'] == 'created'
    assert any(run['id'] == run_id for run in client.get('/api/runs').get_json()['runs'])

    assert client.post(f'/api/runs/{run_id}/start').status_code == 200
    routes.run_manager.wait(run_id, timeout=120)
    assert client.post(f'/api/runs/{run_id}/start').status_code == 400

    details = client.get(f'/api/runs/{run_id}').get_json()
    assert details['status'] == 'completed'
    assert details['exit_status'] == 'ok'

    report = client.get(f'/api/runs/{run_id}/report')
    assert report.status_code == 200
    assert report.get_json()['verb'] == 'hls'
    assert client.get(f'/api/runs/{run_id}/progress').get_json()['status'] == 'completed'

    assert client.delete(f'/api/runs/{run_id}').status_code == 200
    assert client.get(f'/api/runs/{run_id}').status_code == 404
