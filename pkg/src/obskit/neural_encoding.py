"""Strain-to-firing-probability encoding.

A decaying-cosine temporal kernel (the spike-triggered average) filters the
strain history over a finite window; the filtered value is normalized and
passed through a logistic activation to give a firing probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class WindowError(ValueError):
    """Stimulus history does not cover the filter window."""


@dataclass(frozen=True)
class EncoderParams:
    """Kernel and activation parameters, SI units.

    a          kernel delay, s
    b          kernel width, s
    omega_sta  kernel frequency, rad/s
    window     filter duration N, s
    C_xi       normalization constant of the projected stimulus
    c          activation slope
    d          activation half-max position
    """

    a: float = 0.005
    b: float = 0.004
    omega_sta: float = 1000.0
    window: float = 0.040
    C_xi: float = 0.1174
    c: float = 10.0
    d: float = 0.5

    def __post_init__(self):
        if self.b <= 0 or self.window <= 0 or self.C_xi <= 0:
            raise ValueError("b, window, and C_xi must be positive")


@dataclass(frozen=True)
class StimulusHistory:
    """Strain samples on a uniform grid ending at the current time."""

    samples: np.ndarray
    step: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        if self.step <= 0:
            raise ValueError("step must be positive")


def sta_kernel(tau, params):
    """Decaying-cosine kernel cos(w*(-tau+a)) * exp(-(-tau+a)^2 / b^2)."""
    tau = np.asarray(tau, dtype=float)
    arg = -tau + params.a
    out = np.cos(params.omega_sta * arg) * np.exp(-(arg * arg) / params.b**2)
    return float(out) if out.ndim == 0 else out


def window_sample_count(params, step):
    """Samples spanning [0, N] at the given step; step must divide N."""
    ratio = params.window / step
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-12 * max(ratio, 1.0):
        raise WindowError(f"grid step {step} does not divide the window {params.window}")
    return m + 1


def window_weights(params, step):
    """Trapezoid weights of the kernel over [0, N], scaled by 1/C_xi.

    ``weights[j]`` multiplies the strain sample at lag j*step, so the
    projected stimulus is a plain dot product with the reversed history.
    """
    m = window_sample_count(params, step)
    tau = np.arange(m) * step
    w = sta_kernel(tau, params) * (step / params.C_xi)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def project_stimulus(history, params):
    """Projected stimulus: windowed convolution of strain with the kernel.

    Uses the most recent N/step + 1 samples of the history; raises
    WindowError when the history is too short.
    """
    w = window_weights(params, history.step)
    if history.samples.shape[0] < w.size:
        raise WindowError(
            f"history has {history.samples.shape[0]} samples, window needs {w.size}")
    recent = history.samples[-w.size:]
    return float(recent[::-1] @ w)


def nla(xi, params):
    """Logistic activation 1 / (1 + exp(-c*(xi - d)))."""
    xi = np.asarray(xi, dtype=float)
    out = 1.0 / (1.0 + np.exp(-params.c * (xi - params.d)))
    return float(out) if out.ndim == 0 else out


def nla_derivative(xi, params):
    """Slope of the activation, c*exp(-c*(xi-d)) / (exp(-c*(xi-d)) + 1)^2."""
    xi = np.asarray(xi, dtype=float)
    e = np.exp(-params.c * (xi - params.d))
    out = params.c * e / (e + 1.0) ** 2
    return float(out) if out.ndim == 0 else out


class EncodeResult(NamedTuple):
    """Encoded series; element i corresponds to strain index offset + i."""

    offset: int
    xi: np.ndarray
    p_fire: np.ndarray


def project_series(strains, params, step):
    """Projected stimulus at every strain index with a full window behind it.

    ``strains`` may be 1-D (single site) or 2-D with time on axis 0.
    Returns (offset, xi) where xi[i] belongs to strain index offset + i.
    """
    strains = np.asarray(strains, dtype=float)
    w = window_weights(params, step)
    m = w.size
    if strains.shape[0] < m:
        raise WindowError(f"series has {strains.shape[0]} samples, window needs {m}")
    windows = np.lib.stride_tricks.sliding_window_view(strains, m, axis=0)
    xi = windows @ w[::-1]
    return m - 1, xi


def encode(strains, params, step):
    """Full encoding of a strain series into firing probabilities.

    Outputs exist only once a full window of history is available; earlier
    times are omitted rather than zero-padded.
    """
    offset, xi = project_series(strains, params, step)
    return EncodeResult(offset=offset, xi=xi, p_fire=nla(xi, params))
