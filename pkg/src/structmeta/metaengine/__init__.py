from .config import GRAD_ORDERS, WEIGHT_MODES, MetaConfig
from .core import (
    evaluate,
    inner_update,
    loss_grad,
    loss_value,
    meta_gradient,
    meta_test_loss,
    normalize_weights,
    task_similarity,
    taylor_residual,
)
from .train import (
    TrainState,
    accuracies,
    initial_split,
    meta_step,
    run_independent,
    run_invenio,
    run_shared_maml,
    run_transfer,
)
