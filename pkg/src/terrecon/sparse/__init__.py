from .autograd import Var, concat_cols, elu, sigmoid, take_rows
from .kernel_map import KernelMap, build_kernel_map, build_transposed_kernel_map, kernel_offsets
from .ops import ConvRecord, conv_backward, conv_forward, prune, sparse_conv, transposed_generative_conv
from .tensor import CoordIndex, SparseTensor

__all__ = [
    "ConvRecord",
    "CoordIndex",
    "KernelMap",
    "SparseTensor",
    "Var",
    "build_kernel_map",
    "build_transposed_kernel_map",
    "concat_cols",
    "conv_backward",
    "conv_forward",
    "elu",
    "kernel_offsets",
    "prune",
    "sigmoid",
    "sparse_conv",
    "take_rows",
    "transposed_generative_conv",
]
