"""Floating-point reference neuron dynamics.

Step functions are pure: they take a :class:`NeuronState` and return the next
state together with the emitted spike bit. ``lif_layer_step`` is the
vectorized form the network uses; it must agree with the scalar functions
wrapped in :func:`apply_refractory`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

RESET_ZERO = "zero"
RESET_SUBTRACT = "subtract"


class InstabilityError(ValueError):
    """Forward-Euler step too large for the membrane time constant."""


@dataclass(frozen=True)
class NeuronParams:
    beta: float = 0.95
    threshold: float = 1.0
    reset_mode: str = RESET_ZERO
    refractory_steps: int = 0
    step_gain: float = 1.0  # Lapicque T/C
    u_rest: float = 0.0

    def __post_init__(self):
        # beta == 1 is allowed so the leak-free limit can be expressed
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.refractory_steps < 0:
            raise ValueError("refractory_steps must be >= 0")
        if self.reset_mode not in (RESET_ZERO, RESET_SUBTRACT):
            raise ValueError(f"unknown reset mode {self.reset_mode!r}")


@dataclass(frozen=True)
class NeuronState:
    u: float = 0.0
    refractory_remaining: int = 0


@dataclass(frozen=True)
class RCParams:
    R: float
    C: float
    u_rest: float = 0.0
    I: float = 0.0

    def __post_init__(self):
        if self.R <= 0 or self.C <= 0:
            raise ValueError("R and C must be positive")

    @property
    def tau(self) -> float:
        return self.R * self.C


StepFn = Callable[[NeuronState, float, NeuronParams], "tuple[NeuronState, int]"]


def _reset(candidate: float, p: NeuronParams) -> float:
    return 0.0 if p.reset_mode == RESET_ZERO else candidate - p.threshold


def lapicque_step(state: NeuronState, i_in: float, p: NeuronParams):
    u = state.u + p.step_gain * i_in
    if u > p.threshold:
        return replace(state, u=_reset(u, p)), 1
    return replace(state, u=u), 0


def lif_step(state: NeuronState, i_in: float, p: NeuronParams):
    candidate = p.beta * state.u + i_in
    if candidate >= p.threshold:
        return replace(state, u=_reset(candidate, p)), 1
    return replace(state, u=candidate), 0


def lif_hw_float_step(state: NeuronState, i_in: float, p: NeuronParams):
    """Real-valued twin of the hardware update ``beta*u + i - u_rest``."""
    candidate = p.beta * state.u + i_in - p.u_rest
    if candidate >= p.threshold:
        return replace(state, u=_reset(candidate, p)), 1
    return replace(state, u=candidate), 0


def apply_refractory(step_fn: StepFn, state: NeuronState, i_in: float, p: NeuronParams):
    """Run ``step_fn`` with firing suppressed while the refractory window is open.

    The membrane keeps integrating during the window; only the spike (and so
    the reset) is blocked.
    """
    if state.refractory_remaining > 0:
        nxt, _ = step_fn(state, i_in, replace(p, threshold=math.inf))
        return replace(nxt, refractory_remaining=state.refractory_remaining - 1), 0
    nxt, spike = step_fn(state, i_in, p)
    if spike:
        nxt = replace(nxt, refractory_remaining=p.refractory_steps)
    return nxt, spike


def lif_layer_step(u, refractory, current, beta, threshold, refractory_steps=0,
                   reset_mode=RESET_ZERO, u_rest=0.0):
    """One LIF step for a whole layer (arrays); returns ``(u, refractory, spikes)``."""
    candidate = beta * u + current - u_rest
    blocked = refractory > 0
    spikes = (candidate >= threshold) & ~blocked
    if reset_mode == RESET_ZERO:
        u_next = np.where(spikes, 0.0, candidate)
    else:
        u_next = np.where(spikes, candidate - threshold, candidate)
    ref_next = np.where(blocked, refractory - 1, np.where(spikes, refractory_steps, 0))
    return u_next, ref_next, spikes.astype(np.uint8)


# -- continuous RC membrane -----------------------------------------------------


def rc_closed_form(t, rc: RCParams):
    """Step response of ``tau du/dt = -(u - u_rest) + R I`` from ``u(0) = u_rest``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = rc.u_rest + rc.R * rc.I * -np.expm1(-t / rc.tau)
    return float(out) if out.ndim == 0 else out


def rc_integrate(rc: RCParams, dt: float, n_steps: int, u0: float | None = None) -> np.ndarray:
    """Forward-Euler trajectory ``u_0 .. u_n`` (length ``n_steps + 1``)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt >= 2 * rc.tau:
        raise InstabilityError(f"dt={dt} >= 2*tau={2 * rc.tau}: forward Euler is unstable")
    a = dt / rc.tau
    u = np.empty(n_steps + 1)
    u[0] = rc.u_rest if u0 is None else u0
    drive = rc.R * rc.I
    for k in range(n_steps):
        u[k + 1] = u[k] + a * (-(u[k] - rc.u_rest) + drive)
    return u
