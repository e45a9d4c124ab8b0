from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

WEIGHT_MODES = ("clamp-l1", "softmax", "signed-l1")
GRAD_ORDERS = ("exact", "first_order")


@dataclass(frozen=True)
class MetaConfig:
    """Hyper-parameters of the structured meta-learning loop.

    ``alpha`` is the inner (meta-train) step size, ``delta`` the outer step
    size and ``beta`` the weight of the meta-test loss. ``gamma`` is carried
    for completeness but no update rule reads it.
    """

    alpha: float = 1e-4
    beta: float = 1.0
    delta: float = 1e-3
    gamma: float = 0.0
    n_iter: int = 100
    meta_test_batch: int = 12
    split_fraction: float = 0.5
    weight_mode: str = "clamp-l1"
    grad_order: str = "exact"
    eval_every: int = 0
    seed: int = 0
    divergence_limit: float = 1e6

    def __post_init__(self):
        if not (self.alpha > 0 and self.delta > 0):
            raise ConfigError("alpha and delta must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.n_iter < 0 or self.eval_every < 0:
            raise ConfigError("n_iter and eval_every must be non-negative")
        if self.meta_test_batch < 1:
            raise ConfigError("meta_test_batch must be at least 1")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.grad_order not in GRAD_ORDERS:
            raise ConfigError(f"grad_order must be one of {GRAD_ORDERS}")

    @classmethod
    def from_dict(cls, d: dict) -> "MetaConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown meta config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def n_train(self, K: int) -> int:
        return int(min(max(round(K * self.split_fraction), 1), K - 1))

    def check_tasks(self, K: int) -> None:
        if K < 2:
            raise ConfigError("structured meta-learning needs at least 2 tasks")
        k_train = self.n_train(K)
        smallest = min(k_train, K - k_train)
        if self.meta_test_batch > smallest:
            raise ConfigError(
                f"meta_test_batch={self.meta_test_batch} exceeds the meta-test split size "
                f"({smallest}) for K={K}"
            )
