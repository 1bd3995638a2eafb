"""Independent numeric oracles: min-plus operators evaluated on a dense grid.

Nothing here calls the closed forms under test. Curves are sampled directly
from their definitions on ``d in [0, 100]`` with step ``1e-3``; parameters
used with these oracles put every breakpoint on the grid, so grid infima and
suprema are attained exactly.
"""

import numpy as np

STEP = 1e-3
GRID = np.arange(100_001) * STEP


def tb_values(rate, burst, d=GRID):
    """Token bucket sampled on ``d``: zero at d <= 0."""
    return np.where(d > 0, rate * d + burst, 0.0)


def rl_values(rate, latency, d=GRID):
    return rate * np.maximum(0.0, d - latency)


def grid_index(x):
    return int(round(x / STEP))


def convolution_at(f_vals, g_vals, t_idx):
    """(f (x) g)(t) = min over s in [0, t] of f(s) + g(t - s), grid-exact."""
    return float(np.min(f_vals[: t_idx + 1] + g_vals[t_idx::-1]))


def deconvolution_at(f_vals, g_vals, t_idx):
    """(f (/) g)(t) = sup over u >= 0 of f(t + u) - g(u), over the grid span."""
    span = len(f_vals) - t_idx
    return float(np.max(f_vals[t_idx:] - g_vals[:span]))


def residual_values(srate, slat, crate, cburst):
    """max{0, beta(d) - alpha(d)} on the grid."""
    return np.maximum(0.0, rl_values(srate, slat) - tb_values(crate, cburst))


def refit_rate_latency(values):
    """Rate and latency of a grid-sampled rate-latency curve, from its tail.

    Assumes the knee lies below d = 50.
    """
    i, j = grid_index(50.0), len(GRID) - 1
    rate = (values[j] - values[i]) / (GRID[j] - GRID[i])
    latency = GRID[j] - values[j] / rate
    return rate, latency


def horizontal_deviation(arr_rate, arr_burst, srate, slat):
    """sup over t of the horizontal gap from a token bucket to a rate-latency curve.

    For each t the service curve is inverted by linear interpolation between
    grid samples (exact for piecewise-linear curves with breakpoints on the
    grid); t ranges over the right limit at 0 and the grid.
    """
    beta = rl_values(srate, slat)
    t = GRID
    need = np.where(t > 0, arr_rate * t + arr_burst, 0.0)
    need = np.concatenate(([arr_burst], need[1:]))  # right limit at t = 0
    valid = need <= beta[-1]  # demand the grid can still serve
    t, need = t[valid], need[valid]
    # first grid index with beta >= need, then interpolate back one step
    j = np.searchsorted(beta, need, side="left")
    j = np.clip(j, 1, len(GRID) - 1)
    lo, hi = beta[j - 1], beta[j]
    frac = np.where(hi > lo, (need - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
    reach = GRID[j - 1] + frac * STEP
    reach = np.where(need <= 0, 0.0, reach)
    return float(np.max(reach - t))


def random_grid_draws(count, seed):
    """Curve parameters with breakpoints on the oracle grid and knees below d = 50."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        R = rng.integers(500, 1001) / 1000
        rho = rng.integers(0, 501) / 1000 * R
        yield (R, rng.integers(0, 5001) * STEP, rho, rng.integers(0, 5001) * STEP,
               rng.integers(500, 1001) / 1000, rng.integers(0, 5001) * STEP)
