"""
Moteur de différentiation automatique sur numpy (float64).

Modules:
- tensor: Tensor, DualTensor, TraceNode et primitives tracées
- api: gradients, grad, jvp, hvp, grad_of_derived_scalar, replay
- functional: log_softmax, cross_entropy, sum_of_squares
- oracle: différences finies et Jacobienne exacte (tests)

Usage:
    from diffcore import Tensor, grad

    res = grad(lambda x: (x * x).sum(), [np.array([3.0])])
    res.derivatives[0]  # array([6.])
"""
from diffcore.api import (
    DiffResult,
    grad,
    grad_of_derived_scalar,
    grad_of_derived_scalars,
    gradients,
    hvp,
    jvp,
    push_forward,
    replay,
)
from diffcore.tensor import (
    DualTensor,
    Tensor,
    TraceNode,
    as_tensor,
    dual,
    exp,
    log,
    matmul,
    no_grad,
    set_grad_enabled,
    sigmoid,
    tanh,
    tsum,
)

__all__ = [
    "DiffResult",
    "DualTensor",
    "Tensor",
    "TraceNode",
    "as_tensor",
    "dual",
    "exp",
    "grad",
    "grad_of_derived_scalar",
    "grad_of_derived_scalars",
    "gradients",
    "hvp",
    "jvp",
    "log",
    "matmul",
    "no_grad",
    "push_forward",
    "replay",
    "set_grad_enabled",
    "sigmoid",
    "tanh",
    "tsum",
]
