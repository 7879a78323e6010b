"""
Utilities package: tensors and kernels, projection, network, post-processing,
metrics and file formats.
"""

from .errors import PointSegError, UsageError, DataError, ShapeError, ParameterError, RansacError, NumericalError
from .file_io import read_file, write_file, read_binary, write_binary
from .tensor import Tensor, GradTape, backward, precision
from .kernels import ConvSpec, set_num_threads
from .projection import (
    ProjectionConfig, PointCloud, LabeledCloud, SphericalFrame,
    project, backproject, cloud_from_frame, frame_from_dataset,
)
from .network import GraphConfig, ModelParams, init_params, model_forward, predict, loss, train_step
from .optim import Adagrad
from .checkpoint import save_checkpoint, load_checkpoint
from .ransac import RansacConfig, PlaneModel, ransac_plane, refine
from .metrics import ClassCounts, EvalReport, accumulate, finalize
from .dataio import (
    DatasetIndex, build_index, batches, load_velodyne_bin, load_frame_array,
    save_class_map_image, save_labeled_cloud,
)
from .synthetic import synthetic_scene, synthetic_frame

__all__ = [
    'PointSegError',
    'UsageError',
    'DataError',
    'ShapeError',
    'ParameterError',
    'RansacError',
    'NumericalError',
    'read_file',
    'write_file',
    'read_binary',
    'write_binary',
    'Tensor',
    'GradTape',
    'backward',
    'precision',
    'ConvSpec',
    'set_num_threads',
    'ProjectionConfig',
    'PointCloud',
    'LabeledCloud',
    'SphericalFrame',
    'project',
    'backproject',
    'cloud_from_frame',
    'frame_from_dataset',
    'GraphConfig',
    'ModelParams',
    'init_params',
    'model_forward',
    'predict',
    'loss',
    'train_step',
    'Adagrad',
    'save_checkpoint',
    'load_checkpoint',
    'RansacConfig',
    'PlaneModel',
    'ransac_plane',
    'refine',
    'ClassCounts',
    'EvalReport',
    'accumulate',
    'finalize',
    'DatasetIndex',
    'build_index',
    'batches',
    'load_velodyne_bin',
    'load_frame_array',
    'save_class_map_image',
    'save_labeled_cloud',
    'synthetic_scene',
    'synthetic_frame',
]
