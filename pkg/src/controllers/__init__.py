"""
Controllers package for pipeline orchestration.
"""

from .pipeline_controller import PipelineController
from .training_controller import TrainingController
from .evaluation_controller import EvaluationController

__all__ = ['PipelineController', 'TrainingController', 'EvaluationController']
