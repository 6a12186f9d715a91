# -*- coding: utf-8 -*-

from .stream import ClassPatterns, SyntheticTaskSpec, Task, TaskStream, class_patterns, generate_task_stream, patchify
from .metrics import AccuracyMatrix, final_metrics, seed_statistics
from .trainer import (
    METHODS,
    MethodConfig,
    MethodFlags,
    PretrainSpec,
    ProjectionState,
    TaskTrainingResult,
    end_of_task_update,
    evaluate,
    pretrain_backbone,
    task_local_loss,
    train_task,
)
from .experiment import ExperimentReport, ModelSpec, RunRecord, run_experiment, run_method
