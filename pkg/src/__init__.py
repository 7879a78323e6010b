"""
PointSeg - road-object segmentation of LiDAR scans on spherical range images.

This package projects point clouds into range images, runs a light fire-module
encoder/decoder with channel reweighting and dilated context layers, trains it
with Adagrad, refines labels with RANSAC ground removal, and evaluates
per-class precision, recall and IoU.
"""

__version__ = "1.0.0"
__author__ = "PointSeg Team"

from .controllers import EvaluationController, PipelineController, TrainingController
from .utilities import (
    GraphConfig, ModelParams, PointCloud, ProjectionConfig, SphericalFrame,
    init_params, model_forward, predict, project, backproject, refine,
)

__all__ = [
    'EvaluationController',
    'PipelineController',
    'TrainingController',
    'GraphConfig',
    'ModelParams',
    'PointCloud',
    'ProjectionConfig',
    'SphericalFrame',
    'init_params',
    'model_forward',
    'predict',
    'project',
    'backproject',
    'refine',
]
