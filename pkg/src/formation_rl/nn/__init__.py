"""Autodiff engine, layers, and the attention actor-critic."""

from formation_rl.nn.autodiff import Tensor, concat, no_grad, parameter, softmax, where
from formation_rl.nn.policy import AttentionPolicy, PolicyConfig

__all__ = ["Tensor", "concat", "no_grad", "parameter", "softmax", "where", "AttentionPolicy", "PolicyConfig"]
