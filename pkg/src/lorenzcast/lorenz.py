"""Lorenz trajectory generation, rescaling, splitting and windowing.

The Lorenz system

    dx/dt = sigma * (y - x)
    dy/dt = rho * x - y - x * z
    dz/dt = x * y - beta * z

is integrated with the explicit Euler method and turned into supervised
one-step-ahead datasets (fixed-length input window -> next value).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class NonFinite(ArithmeticError):
    """A numeric value overflowed or became NaN."""


class DegenerateSeries(ValueError):
    """Series has no spread (max == min), cannot be rescaled."""


class InsufficientData(ValueError):
    """Requested split sizes exceed the available series length."""


SERIES_NAMES = ("x", "y", "z")


@dataclass(frozen=True)
class LorenzParams:
    """ODE parameters plus integration settings.

    sigma is the Prandtl number, rho the Rayleigh number, beta the third
    (nameless) parameter. dt is the Euler time step and n_steps the number
    of integration steps taken from the initial state.
    """

    sigma: float
    rho: float
    beta: float
    dt: float = 0.01
    n_steps: int = 1500

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho > 0 and self.beta > 0):
            raise ValueError("sigma, rho, beta must all be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")


@dataclass(frozen=True)
class LorenzState:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class ScaleTransform:
    """Affine map sending a series' [min, max] onto [-0.5, 0.5].

    scaled = (value - offset) * gain - 0.5, with offset = min and
    gain = 1 / (max - min). Invertible to full double precision.
    """

    offset: float
    gain: float

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.offset) * self.gain - 0.5

    def invert(self, scaled: np.ndarray) -> np.ndarray:
        return (np.asarray(scaled, dtype=np.float64) + 0.5) / self.gain + self.offset


@dataclass
class SeriesSet:
    """Three aligned scalar series, optionally carrying their rescaling."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    scale: dict[str, ScaleTransform] | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        if not (len(self.x) == len(self.y) == len(self.z)):
            raise ValueError("x, y, z must have equal length")

    def __len__(self) -> int:
        return len(self.x)

    def series(self, name: str) -> np.ndarray:
        if name not in SERIES_NAMES:
            raise KeyError(f"unknown series {name!r}")
        return getattr(self, name)

    def truncate(self, n: int) -> "SeriesSet":
        return SeriesSet(self.x[:n], self.y[:n], self.z[:n], scale=self.scale)


def lorenz_derivative(state: LorenzState, params: LorenzParams) -> LorenzState:
    """Right-hand side of the Lorenz equations at `state`."""
    dx = params.sigma * (state.y - state.x)
    dy = params.rho * state.x - state.y - state.x * state.z
    dz = state.x * state.y - params.beta * state.z
    return LorenzState(dx, dy, dz)


def euler_integrate(init: LorenzState, params: LorenzParams) -> SeriesSet:
    """Integrate with explicit Euler: state[t+1] = state[t] + dt * f(state[t]).

    All three coordinates advance simultaneously from the state at step t.
    Returns series of length n_steps + 1, beginning with `init`.
    """
    n = params.n_steps
    traj = np.empty((n + 1, 3), dtype=np.float64)
    traj[0] = init.as_array()
    sigma, rho, beta, dt = params.sigma, params.rho, params.beta, params.dt
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n):
            x, y, z = traj[t]
            traj[t + 1, 0] = x + dt * (sigma * (y - x))
            traj[t + 1, 1] = y + dt * (rho * x - y - x * z)
            traj[t + 1, 2] = z + dt * (x * y - beta * z)
    if not np.all(np.isfinite(traj)):
        bad = int(np.argwhere(~np.isfinite(traj).all(axis=1))[0, 0])
        raise NonFinite(f"trajectory became non-finite at step {bad}")
    return SeriesSet(traj[:, 0], traj[:, 1], traj[:, 2])


def rescale(series: np.ndarray) -> tuple[np.ndarray, ScaleTransform]:
    """Affinely map a series onto [-0.5, 0.5] (min -> -0.5, max -> +0.5)."""
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise DegenerateSeries("empty series")
    lo, hi = float(series.min()), float(series.max())
    if hi == lo:
        raise DegenerateSeries(f"constant series (value {lo}) cannot be rescaled")
    # divide by the span rather than multiply by its reciprocal: x/x == 1
    # exactly in IEEE, so min/max land on -0.5/+0.5 with no ulp slop
    scaled = (series - lo) / (hi - lo) - 0.5
    return scaled, ScaleTransform(offset=lo, gain=1.0 / (hi - lo))


def rescale_series_set(series_set: SeriesSet) -> SeriesSet:
    """Rescale each of the three series independently onto [-0.5, 0.5]."""
    scaled = {}
    transforms = {}
    for name in SERIES_NAMES:
        scaled[name], transforms[name] = rescale(series_set.series(name))
    return SeriesSet(scaled["x"], scaled["y"], scaled["z"], scale=transforms)


def split_train_test(
    series_set: SeriesSet, n_train: int, n_test: int
) -> tuple[SeriesSet, SeriesSet]:
    """Contiguous split: test immediately follows train."""
    if n_train + n_test > len(series_set):
        raise InsufficientData(
            f"need {n_train + n_test} points, have {len(series_set)}"
        )
    train = SeriesSet(
        series_set.x[:n_train], series_set.y[:n_train], series_set.z[:n_train],
        scale=series_set.scale,
    )
    test = SeriesSet(
        series_set.x[n_train:n_train + n_test],
        series_set.y[n_train:n_train + n_test],
        series_set.z[n_train:n_train + n_test],
        scale=series_set.scale,
    )
    return train, test


@dataclass
class WindowedDataset:
    """Supervised one-step-ahead examples.

    inputs is always stored as (examples, channels, window); `layout`
    records the batch convention consumers should use:
      conv      -> batch x channels x width
      recurrent -> sequence x batch x features
    Example i targets series index i; its window holds the `window`
    values strictly before i (zero left-padding covers i < window).
    """

    inputs: np.ndarray
    targets: np.ndarray
    window_length: int
    channels: int
    layout: str
    target_names: tuple[str, ...] = field(default=("x",))

    def __post_init__(self):
        if self.layout not in ("conv", "recurrent"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets disagree on example count")

    @property
    def n_examples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.targets.shape[1]

    def batch_inputs(self, indices) -> np.ndarray:
        """Gather examples arranged per the layout tag."""
        batch = self.inputs[indices]  # (b, channels, window)
        if self.layout == "conv":
            return batch
        return batch.transpose(2, 0, 1)  # (window, b, channels)

    def subset(self, start: int, stop: int) -> "WindowedDataset":
        return WindowedDataset(
            self.inputs[start:stop], self.targets[start:stop],
            self.window_length, self.channels, self.layout, self.target_names,
        )


def make_windows(
    series_set: SeriesSet,
    window: int,
    conditional: bool = False,
    multitask: bool = False,
    layout: str = "conv",
    target: str = "x",
) -> WindowedDataset:
    """Window a series set into one example per series index.

    Each series is left-padded with `window` zeros, then example t gets the
    padded values at [t, t + window) as input (i.e. the original values at
    [t - window, t), zeros where that runs past the start) and the value at
    t as target. Conditional inputs carry all three series as channels in
    (x, y, z) order; otherwise the single channel is the target's own
    history. Multitask emits all three targets per example.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(series_set)
    channel_names = SERIES_NAMES if conditional else (target,)
    target_names = SERIES_NAMES if multitask else (target,)

    inputs = np.zeros((n, len(channel_names), window), dtype=np.float64)
    for c, name in enumerate(channel_names):
        padded = np.concatenate([np.zeros(window), series_set.series(name)])
        for j in range(window):
            inputs[:, c, j] = padded[j:j + n]
    targets = np.stack(
        [series_set.series(name) for name in target_names], axis=1
    )
    return WindowedDataset(
        inputs, targets, window, len(channel_names), layout, tuple(target_names)
    )


def save_series_csv(series_set: SeriesSet, path) -> None:
    """Write `t,x,y,z` rows at full double precision (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z"])
        for t in range(len(series_set)):
            writer.writerow(
                [t] + [f"{series_set.series(n)[t]:.17g}" for n in SERIES_NAMES]
            )


def load_series_csv(path) -> SeriesSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t", "x", "y", "z"]:
            raise ValueError(f"unexpected header {header!r}")
        rows = [[float(v) for v in row[1:4]] for row in reader]
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    return SeriesSet(arr[:, 0], arr[:, 1], arr[:, 2])
