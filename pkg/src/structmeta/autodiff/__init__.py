from .tensor import (
    Tensor,
    add,
    concat,
    ensure_tensor,
    exp,
    gather,
    get_default_dtype,
    grad,
    index,
    is_grad_enabled,
    logsumexp,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    set_grad_enabled,
    sigmoid,
    softmax,
    softplus,
    transpose,
)
from .functional import bce_with_logits, conv2d, conv_output_size, cross_entropy, linear, max_pool2d
from .graph import CompGraph, flatten, grad_through_update
from .gradcheck import finite_diff_grad, relative_error
