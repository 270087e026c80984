from .tensor import (
    Parameter,
    Tensor,
    add,
    clip,
    concat,
    log,
    matmul,
    mul,
    no_grad,
    ones,
    randn,
    relu,
    reshape,
    sigmoid,
    sub,
    tmean,
    tsum,
    zeros,
)
from .ops import (
    adaptive_avgpool,
    batchnorm2d,
    bilinear_upsample,
    conv2d,
    global_avgpool,
    maxpool2d,
)
from .gradcheck import grad_check

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "relu",
    "sigmoid",
    "log",
    "clip",
    "tsum",
    "tmean",
    "reshape",
    "zeros",
    "ones",
    "randn",
    "conv2d",
    "maxpool2d",
    "batchnorm2d",
    "global_avgpool",
    "adaptive_avgpool",
    "bilinear_upsample",
    "grad_check",
]
