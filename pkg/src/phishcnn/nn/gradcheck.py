"""Central finite-difference verification of hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import BatchNorm, Layer, Sequential
from .rng import RngStream

DEFAULT_TOLERANCE = 1e-5
BATCHNORM_TOLERANCE = 1e-4
STEP = 1e-4
# denominator floor so that entries whose true gradient is zero are compared
# absolutely rather than relative to round-off noise
ERROR_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    name: str
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(np.isfinite(e) and e < self.tolerance for e in self.errors.values())

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = ", ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        return f"{status} {self.name}: max rel err {self.max_error:.2e} (tol {self.tolerance:.0e}) [{detail}]"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ERROR_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _layers(fragment) -> list[Layer]:
    if isinstance(fragment, Sequential):
        return fragment.layers
    if hasattr(fragment, "layers"):
        return list(fragment.layers)
    return [fragment]


def grad_check(fragment, rng: RngStream, tolerance: float | None = None, *, input_shape=None, x=None,
               training: bool = True, randomize_params: bool = True, name: str | None = None,
               step: float = STEP) -> GradCheckReport:
    """Compare a fragment's analytic gradients with central differences.

    The scalar objective is ``sum(forward(x) * R)`` for a fixed random
    projection ``R``. Inputs and (optionally) parameters are drawn from
    ``U[-1, 1]`` in double precision. Every parameter tensor and the input
    are checked; the report holds the max relative error per tensor.
    """
    layers = _layers(fragment)
    if tolerance is None:
        has_bn = any(isinstance(layer, BatchNorm) for layer in layers)
        tolerance = BATCHNORM_TOLERANCE if has_bn else DEFAULT_TOLERANCE
    if x is None:
        x = rng.uniform(-1, 1, input_shape)
    x = np.array(x, dtype=np.float64)
    if randomize_params:
        for layer in layers:
            for k, p in layer.params.items():
                layer.params[k] = rng.uniform(-1, 1, p.shape)
    for layer in layers:
        for k, p in layer.params.items():
            layer.params[k] = p.astype(np.float64)

    out = np.asarray(fragment.forward(x, training))
    proj = rng.uniform(-1, 1, out.shape)

    def objective() -> float:
        return float(np.sum(np.asarray(fragment.forward(x, training)) * proj))

    objective()
    dx = fragment.backward(proj)
    analytic = {"input": np.array(dx, dtype=np.float64)}
    for i, layer in enumerate(layers):
        for k in layer.params:
            analytic[f"{i}.{layer.name}.{k}"] = np.array(layer.grads[k], dtype=np.float64)

    report = GradCheckReport(name or type(fragment).__name__, tolerance)
    targets = [("input", x)]
    for i, layer in enumerate(layers):
        for k in layer.params:
            targets.append((f"{i}.{layer.name}.{k}", layer.params[k]))
    for label, arr in targets:
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus = objective()
            flat[j] = orig - step
            f_minus = objective()
            flat[j] = orig
            nflat[j] = (f_plus - f_minus) / (2 * step)
        report.errors[label] = relative_error(analytic[label], numeric)
    return report
