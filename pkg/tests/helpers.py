"""Shared reference implementations and fixture builders for the tests.

The attention reference here is deliberately independent of the library
ops: plain numpy, written straight from the classic scaled-dot-product
formulation, so the model's multi-scale path can be checked against it.
"""

import numpy as np

from tstransformer.data import DegradationSpec


def vanilla_attention_reference(x: np.ndarray, model, stage: int) -> np.ndarray:
    """Plain scaled dot-product attention over tokens, no reduction.

    Q, K, V and output projections are read from the model's stage
    weights; computation uses raw numpy only.
    """
    cfg = model.config
    w = lambda name: model.param(f"stage{stage}.{name}.weight").data
    b = lambda name: model.param(f"stage{stage}.{name}.bias").data
    q = x @ w("q") + b("q")
    k = x @ w("k") + b("k")
    v = x @ w("v") + b("v")
    hd = cfg.width // cfg.heads
    outs = []
    for h in range(cfg.heads):
        sl = slice(h * hd, (h + 1) * hd)
        scores = q[:, sl] @ k[:, sl].T / np.sqrt(cfg.width / cfg.heads)
        scores = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        outs.append(attn @ v[:, sl])
    return np.concatenate(outs, axis=-1) @ w("out") + b("out")


def degradation_fixture_spec(noise: float = 0.003) -> DegradationSpec:
    """The seeded fixture used by the end-to-end prognostics tests."""
    return DegradationSpec(
        drift_per_hour=1.8e-4,
        recovery_step_volts=0.0,
        noise_std_volts=noise,
        periodic_amp_volts=0.002,
        periodic_period_hours=45.0,
        covariate_wobble=0.02,
        covariate_lead_hours=4.0,
        sample_interval_hours=0.025,
    )


def first_crossing_by_bisection(curve, threshold: float, t_lo: float, t_hi: float, samples: int = 200000):
    """Independent crossing-time oracle: dense scan plus bisection.

    ``curve`` maps hour arrays to voltages. Returns the first time in
    [t_lo, t_hi] where the curve is at or below the threshold, or None.
    """
    t = np.linspace(t_lo, t_hi, samples)
    v = curve(t)
    below = np.nonzero(v <= threshold)[0]
    if len(below) == 0:
        return None
    i = below[0]
    if i == 0:
        return float(t[0])
    lo, hi = t[i - 1], t[i]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if curve(np.array([mid]))[0] <= threshold:
            hi = mid
        else:
            lo = mid
    return float(hi)
