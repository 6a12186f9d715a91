# -*- coding: utf-8 -*-

from .layer import (
    AttentionTrace,
    LayerParams,
    affinity,
    aggregate,
    layer_forward,
    merge_heads,
    qkv_transform,
    split_heads,
)
from .backbone import (
    BackboneModel,
    ClassifierHead,
    LossSpec,
    ProjectionInputs,
    PromptGradients,
    collect_projection_inputs,
    head_offset,
    model_forward,
    prompt_gradients,
    total_loss,
)
