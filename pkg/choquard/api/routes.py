import logging

from flask import Blueprint, jsonify, request

from choquard.models.errors import ParameterError
from choquard.models.run_manager import RunManager

logger = logging.getLogger('api')

# Define blueprint
api_bp = Blueprint('api', __name__)

run_manager = RunManager()


@api_bp.route('/runs', methods=['GET'])
def list_runs():
    """List all runs"""
    runs = [run.to_dict() for run in run_manager.runs.values()]
    return jsonify({'runs': runs}), 200


@api_bp.route('/runs', methods=['POST'])
def create_run():
    """Create a run from a JSON body of configuration keys plus `command`"""
    data = request.get_json(silent=True)

    if not data or 'command' not in data:
        return jsonify({'error': 'command is required'}), 400

    try:
        run_id = run_manager.create_run(data)
    except ParameterError as e:
        logger.warning(f"Rejected run configuration: {e}")
        return jsonify({'error': str(e), 'violations': e.violations}), 400

    return jsonify({
        'run_id': run_id,
        'message': 'Run created successfully'
    }), 201


@api_bp.route('/runs/<run_id>', methods=['GET'])
def get_run(run_id):
    """Get run details and current status"""
    run = run_manager.get_run(run_id)

    if not run:
        return jsonify({'error': 'Run not found'}), 404

    return jsonify(run.to_dict()), 200


@api_bp.route('/runs/<run_id>/start', methods=['POST'])
def start_run(run_id):
    """Start the run on a background thread"""
    if not run_manager.get_run(run_id):
        return jsonify({'error': 'Run not found'}), 404

    if not run_manager.start_run(run_id):
        return jsonify({'error': 'Run already started'}), 400

    return jsonify({'message': 'Run started successfully'}), 200


@api_bp.route('/runs/<run_id>/progress', methods=['GET'])
def get_progress(run_id):
    progress = run_manager.get_progress(run_id)

    if progress is None:
        return jsonify({'error': 'Run not found'}), 404

    return jsonify(progress), 200


@api_bp.route('/runs/<run_id>/report', methods=['GET'])
def get_report(run_id):
    """Report document of a finished run"""
    if not run_manager.get_run(run_id):
        return jsonify({'error': 'Run not found'}), 404

    report = run_manager.get_report(run_id)
    if report is None:
        return jsonify({'error': 'Run has not finished'}), 409

    return jsonify(report), 200


@api_bp.route('/runs/<run_id>', methods=['DELETE'])
def delete_run(run_id):
    if not run_manager.get_run(run_id):
        return jsonify({'error': 'Run not found'}), 404

    if not run_manager.delete_run(run_id):
        return jsonify({'error': 'Run is still running'}), 409

    return jsonify({'message': 'Run deleted'}), 200
