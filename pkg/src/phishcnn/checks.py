"""The seeded gradient-check suite run by ``phishcnn gradcheck``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, build_model
from .nn import functional as F
from .nn.gradcheck import GradCheckReport, grad_check
from .nn.layers import BatchNorm, Conv1D, Dense, Dropout, Flatten, MaxPool1D, ReLU, Sequential, Sigmoid
from .nn.rng import RngStream

# dropout masks are redrawn on every training forward pass, so the
# train-mode end-to-end check runs with the dropout path switched off
TINY_CNN2 = ModelConfig(variant="cnn2", num_filters=2, kernel1=4, kernel2=2, fc_units=3, input_length=12,
                        dropout_rate=0.0)


class SigmoidBCE:
    """Sigmoid output followed by the mean BCE loss against fixed labels.

    ``forward`` returns the loss as a one-element array so the head can be
    checked like any other fragment.
    """

    name = "sigmoid_bce"

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.float64)
        self.layers = [Sigmoid()]

    def forward(self, x, training=False):
        p = self.layers[0].forward(x, training)
        loss, self._dp = F.bce_loss(p, self.labels)
        return np.array([loss])

    def backward(self, grad_out):
        return self.layers[0].backward(grad_out[0] * self._dp)


@dataclass
class GradCheckCase:
    name: str
    build: object
    input_shape: tuple[int, ...]
    training: bool = True


def _relu_input(rng: RngStream, shape) -> np.ndarray:
    x = rng.uniform(-1, 1, shape)
    return np.where(np.abs(x) < 0.05, np.where(x < 0, -0.05, 0.05), x)


def _cases() -> list[GradCheckCase]:
    def conv(c_in, f, k):
        return lambda rng: Conv1D(c_in, f, k, rng)

    def dense(d, u):
        return lambda rng: Dense(d, u, rng)

    return [
        GradCheckCase("conv1d c1 f3 k4", conv(1, 3, 4), (2, 9, 1)),
        GradCheckCase("conv1d c2 f2 k1", conv(2, 2, 1), (3, 5, 2)),
        GradCheckCase("conv1d c3 f4 k5", conv(3, 4, 5), (2, 5, 3)),
        GradCheckCase("conv1d c1 f1 k2", conv(1, 1, 2), (1, 6, 1)),
        GradCheckCase("maxpool even length", lambda rng: MaxPool1D(2, 2), (2, 8, 3)),
        GradCheckCase("maxpool odd length", lambda rng: MaxPool1D(2, 2), (2, 7, 2)),
        GradCheckCase("dense 5x3", dense(5, 3), (4, 5)),
        GradCheckCase("dense 1x1", dense(1, 1), (3, 1)),
        GradCheckCase("dense 8x2", dense(8, 2), (2, 8)),
        GradCheckCase("batchnorm train 2d", lambda rng: BatchNorm(3), (5, 3)),
        GradCheckCase("batchnorm train 3d", lambda rng: BatchNorm(2), (3, 4, 2)),
        GradCheckCase("batchnorm infer", lambda rng: BatchNorm(4), (3, 4), training=False),
        GradCheckCase("relu", lambda rng: ReLU(), (4, 6)),
        GradCheckCase("sigmoid", lambda rng: Sigmoid(), (3, 5)),
        GradCheckCase("dropout off (infer)", lambda rng: Dropout(0.5, rng), (4, 5), training=False),
        GradCheckCase("dense + dropout off", lambda rng: Sequential([Dense(4, 3, rng), Dropout(0.5, rng)]),
                      (3, 4), training=False),
        GradCheckCase("sigmoid + bce", lambda rng: SigmoidBCE(rng.integers(0, 2, 6)), (6,)),
        GradCheckCase("conv + pool + flatten", lambda rng: Sequential([Conv1D(1, 2, 3, rng), MaxPool1D(2, 2),
                                                                       Flatten()]), (2, 9, 1)),
        GradCheckCase("conv + bn + relu", lambda rng: Sequential([Conv1D(1, 2, 3, rng), BatchNorm(2), ReLU()]),
                      (3, 7, 1)),
        GradCheckCase("dense + bn + relu + dense", lambda rng: Sequential([Dense(5, 4, rng), BatchNorm(4),
                                                                           ReLU(), Dense(4, 1, rng)]), (6, 5)),
        GradCheckCase("tiny cnn2 train", lambda rng: build_model(TINY_CNN2, rng), (6, 12, 1)),
        GradCheckCase("tiny cnn2 infer", lambda rng: build_model(TINY_CNN2, rng), (3, 12, 1), training=False),
    ]


CASE_NAMES = tuple(c.name for c in _cases())


KINK_MARGIN = 1e-3
MAX_ATTEMPTS = 20


def _kink_margin(fragment, x, training) -> float:
    """Distance of ``x`` from the nearest non-differentiable point.

    That is the smallest |input| of any ReLU and the smallest gap between a
    positive pooling-window maximum and its runner-up.
    """
    margin = np.inf
    for layer in getattr(fragment, "layers", [fragment]):
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.min(np.abs(x))))
        elif isinstance(layer, MaxPool1D):
            n = x.shape[-2] // layer.size * layer.size
            windows = np.sort(x[..., :n, :].reshape(*x.shape[:-2], -1, layer.size, x.shape[-1]), axis=-2)
            top, runner_up = windows[..., -1, :], windows[..., -2, :]
            gaps = (top - runner_up)[top > 0]
            if gaps.size:
                margin = min(margin, float(gaps.min()))
        x = layer.forward(x, training)
    return margin


def _check(case: GradCheckCase, rng: RngStream, tolerance: float | None) -> GradCheckReport:
    # Central differences across a ReLU or max-pool kink are meaningless;
    # draws that come close to one are rejected and redrawn.
    for attempt in range(MAX_ATTEMPTS):
        draw = rng.derive(attempt)
        fragment = case.build(draw.derive(0))
        data = draw.derive(1)
        if case.name == "relu":
            x = _relu_input(data, case.input_shape)
        else:
            x = data.uniform(-1, 1, case.input_shape)
        if isinstance(fragment, BatchNorm) and not case.training:
            # non-trivial running statistics so inference is not the identity
            fragment.buffers["running_mean"] = data.uniform(-0.5, 0.5, fragment.buffers["running_mean"].shape)
            fragment.buffers["running_var"] = data.uniform(0.5, 1.5, fragment.buffers["running_var"].shape)
        if case.name.startswith("tiny cnn2"):
            fragment = _NetworkFragment(fragment)
        report = grad_check(fragment, draw.derive(2), tolerance, x=x, training=case.training, name=case.name)
        if _kink_margin(fragment, x, case.training) >= KINK_MARGIN:
            return report
    raise RuntimeError(f"{case.name}: no draw stayed {KINK_MARGIN} away from a kink")


class _NetworkFragment:
    """Exposes a Network through the plain Sequential forward/backward path."""

    def __init__(self, network):
        self.network = network
        self.layers = network.layers

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out


def run_suite(seed: int = 42, tolerance: float | None = None) -> list[GradCheckReport]:
    """Run every case once under ``RngStream(seed).derive(case index)``."""
    master = RngStream(seed)
    return [_check(case, master.derive(i), tolerance) for i, case in enumerate(_cases())]
