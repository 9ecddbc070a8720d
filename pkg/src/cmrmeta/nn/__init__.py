from .adam import AdamState, adam_step
from .model import (BatchNormState, ForwardCache, ModelSpec, StaleCacheError, backward, forward, init_params,
                    replace_head, replace_head_bn, softmax, softmax_cross_entropy)
from .params import IncongruentError, NumericError, ParamSet, param_axpy

__all__ = [
    "AdamState", "BatchNormState", "ForwardCache", "IncongruentError", "ModelSpec", "NumericError",
    "ParamSet", "StaleCacheError", "adam_step", "backward", "forward", "init_params", "param_axpy",
    "replace_head", "replace_head_bn", "softmax", "softmax_cross_entropy",
]
