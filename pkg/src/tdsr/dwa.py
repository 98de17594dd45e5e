"""Dynamic weight averaging of loss components, updated once per epoch."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InsufficientHistoryError

EPS = 1e-12
R_MAX = 10.0
TEMPERATURE = 2.0


@dataclass
class DwaState:
    components: tuple
    temperature: float = TEMPERATURE
    history: dict = field(default_factory=dict)
    current: dict = field(default_factory=dict)

    def __post_init__(self):
        self.components = tuple(self.components)
        if not self.components:
            raise ContractError("DWA needs at least one component")
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")
        for c in self.components:
            self.history.setdefault(c, [])
        if not self.current:
            self.current = {c: 1.0 for c in self.components}

    @property
    def n_active(self):
        return len(self.components)

    @property
    def epochs(self):
        return len(self.history[self.components[0]])


def loss_ratio(state, component, t):
    """``L(t-1) / L(t-2)`` with the denominator clamped to EPS and the ratio to R_MAX."""
    if t < 2:
        raise InsufficientHistoryError(f"epoch {t}: ratios need two prior epochs")
    hist = state.history[component]
    if len(hist) < t:
        raise InsufficientHistoryError(f"epoch {t}: only {len(hist)} epochs recorded")
    r = hist[t - 1] / max(hist[t - 2], EPS)
    return min(r, R_MAX)


def softmax_weights(ratios, temperature, n=None):
    """``n * softmax(ratios / T)`` with max subtraction."""
    r = np.asarray(ratios, dtype=np.float64) / temperature
    e = np.exp(r - r.max())
    n = len(r) if n is None else n
    return n * e / e.sum()


def update_weights(state, t):
    """Weights for epoch ``t``; all ones until two epochs have been recorded."""
    if t < 2:
        weights = {c: 1.0 for c in state.components}
    else:
        ratios = [loss_ratio(state, c, t) for c in state.components]
        lam = softmax_weights(ratios, state.temperature)
        weights = dict(zip(state.components, (float(v) for v in lam)))
    state.current = weights
    return weights


def record_epoch(state, means):
    """Append one epoch of mean losses (a mapping or LossBreakdown) to the history."""
    values = means.active() if hasattr(means, "active") else dict(means)
    if set(values) != set(state.components):
        raise ContractError(f"epoch means cover {sorted(values)}, "
                            f"expected {sorted(state.components)}")
    for c in state.components:
        v = float(values[c])
        if not math.isfinite(v):
            raise ContractError(f"non-finite epoch mean for {c}: {v}")
        state.history[c].append(max(v, EPS))
    return state
