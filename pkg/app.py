"""
Flask API for the pose estimation pipeline.
Receives a point cloud with point-wise predictions and returns instance poses.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
from flask import Flask, jsonify, request
from flask_cors import CORS

from errors import DataError
from geometry import as_points
from log_config import setup_logging
from object_catalog import build_default_catalog, load_catalog
from pipeline_config import ARTIFACT_VERSION, load_config
from point_predictors import PointPredictions
from pose_evaluation import average_precision
from pose_estimation_system import PoseEstimationSystem

setup_logging(os.environ.get('LOG_LEVEL', 'INFO'), json_logs=os.environ.get('LOG_JSON') == '1')
logger = logging.getLogger(__name__)

app = Flask(__name__)

CORS(app,
     origins=[
         "http://localhost:*",
         "http://127.0.0.1:*"
     ],
     methods=["GET", "POST", "OPTIONS"],
     allow_headers=["Content-Type", "Accept"],
     supports_credentials=False,
     max_age=3600)


@dataclass
class CloudRequest:
    scene_id: str
    cloud: np.ndarray
    seed: int = 0


def load_system():
    config = load_config(os.environ.get('PIPELINE_CONFIG'))
    catalog_path = os.environ.get('CATALOG_PATH') or config.paths.catalog
    catalog = load_catalog(catalog_path) if catalog_path else build_default_catalog()
    return PoseEstimationSystem(config, catalog)


# Load the catalog once when the server starts
logger.info("loading pose estimation system")
system = load_system()
logger.info("pose estimation system ready", extra={'objects': len(system.catalog)})


@app.route('/', methods=['GET'])
def home():
    """Home endpoint"""
    return jsonify({
        'status': 'online',
        'message': 'Scale-normalized pose estimation API',
        'version': ARTIFACT_VERSION,
        'endpoints': {
            '/estimate': 'POST - Recover instance poses from point-wise predictions',
            '/evaluate': 'POST - Average precision of TP/FP/IGNORE flags',
            '/health': 'GET - Check API health'
        }
    })


@app.route('/health', methods=['GET'])
def health():
    """Health check endpoint"""
    return jsonify({
        'status': 'healthy',
        'objects': len(system.catalog),
        'sncs': system.sncs
    })


def error_response(e):
    if isinstance(e, (DataError, ValueError, KeyError, TypeError)):
        return jsonify({'status': 'error', 'error': str(e)}), 400
    logger.exception("request failed")
    return jsonify({'status': 'error', 'error': 'internal error'}), 500


@app.route('/estimate', methods=['POST', 'OPTIONS'])
def estimate():
    """
    Expects JSON:
    {
        "scene_id": "scene_00000",
        "cloud": [[x, y, z], ...],
        "predictions": [{"scale": 0.1, "semantic_probs": [...], "quaternion": [w, x, y, z],
                         "translation": [x, y, z], "visibility": 0.9}, ...],
        "sncs": true,
        "seed": 0
    }

    Returns the camera-frame estimates and the normalization record per category.
    """
    if request.method == 'OPTIONS':
        return '', 204
    try:
        data = request.get_json(silent=True)
        if not isinstance(data, dict):
            raise DataError("expected a JSON object")
        missing = [k for k in ('cloud', 'predictions') if k not in data]
        if missing:
            return jsonify({
                'status': 'error',
                'error': f'Missing required fields: {", ".join(missing)}',
                'required_fields': ['cloud', 'predictions']
            }), 400

        scene = CloudRequest(str(data.get('scene_id', 'request')), as_points(data['cloud']),
                             int(data.get('seed', 0)))
        predictions = PointPredictions.from_records(data['predictions'])
        if len(predictions) and predictions.num_classes != len(system.catalog):
            raise DataError(f"predictions have {predictions.num_classes} classes, "
                            f"catalog has {len(system.catalog)}")
        runner = system
        if 'sncs' in data and bool(data['sncs']) != system.sncs:
            runner = PoseEstimationSystem(system.config, system.catalog, system.predictor, bool(data['sncs']))
        result = runner.estimate_scene(scene, predictions)
        return jsonify({'status': 'success', **result.to_dict()})
    except Exception as e:
        return error_response(e)


@app.route('/evaluate', methods=['POST', 'OPTIONS'])
def evaluate():
    """
    Expects JSON: {"flags": ["TP", "FP", "IGNORE", ...], "relevant_count": 2}
    Flags must already be in descending confidence order.
    """
    if request.method == 'OPTIONS':
        return '', 204
    try:
        data = request.get_json(silent=True)
        if not isinstance(data, dict) or 'flags' not in data or 'relevant_count' not in data:
            raise DataError("expected {'flags': [...], 'relevant_count': n}")
        curve = average_precision(list(data['flags']), int(data['relevant_count']))
        return jsonify({'status': 'success', **curve.to_dict()})
    except Exception as e:
        return error_response(e)


if __name__ == '__main__':
    port = int(os.environ.get('PORT', 5000))
    app.run(host='0.0.0.0', port=port, debug=False)
