from .nn import (FIT, INFERENCE, activation, conv2d, dropout, elu, leaky_relu, relu, selu, tanh,
                 upsample_bicubic)
from .optim import AdamState, adam_step, he_init
from .tensor import Graph, GraphError, Tensor, add, backward, concat, forward_diff, matmul, no_graph

__all__ = [
    "FIT", "INFERENCE", "AdamState", "Graph", "GraphError", "Tensor", "activation", "adam_step",
    "add", "backward", "concat", "conv2d", "dropout", "elu", "forward_diff", "he_init",
    "leaky_relu", "matmul", "no_graph", "relu", "selu", "tanh", "upsample_bicubic",
]
