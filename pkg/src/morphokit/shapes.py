"""Synthetic boundary curves used by the shipped fixtures and the test suite."""
import numpy as np

from .geometry import Curve


def polar_curve(radius_fn, n=256, center=(0.0, 0.0), label="", closed=True):
    """Closed curve r(theta) sampled at ``n`` angles, counter-clockwise."""
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    r = radius_fn(th)
    return Curve(np.column_stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)]), closed, label)


def circle(r=1.0, n=256, center=(0.0, 0.0), label=""):
    return polar_curve(lambda th: np.full_like(th, r), n, center, label)


def ellipse(a=1.0, b=0.5, n=256, label=""):
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return Curve(np.column_stack([a * np.cos(th), b * np.sin(th)]), True, label)


def kidney(n=256, label="kidney"):
    """Bean shape with a deep concave notch facing +y."""
    return polar_curve(lambda th: 1.0 - 0.45 * np.exp(-((th - np.pi / 2) / 0.55) ** 2), n, label=label)


def random_star(rng, r0=1.0, amplitude=0.2, modes=4, n=256, label=""):
    """Star-shaped curve r0 * (1 + sum of a few random low harmonics)."""
    k = np.arange(1, modes + 1)
    amp = rng.uniform(-1, 1, modes) * amplitude / modes
    phase = rng.uniform(0, 2 * np.pi, modes)
    return polar_curve(lambda th: r0 * (1 + (amp[:, None] * np.cos(k[:, None] * th + phase[:, None])).sum(0)),
                       n, label=label)


def bud(t, n=256, label="epithelium"):
    """Growing bud outline: an ellipse whose tip extends with t in [0, 1]."""
    def r(th):
        base = 1.0 + 0.35 * t
        tip = (0.25 + 0.6 * t) * np.exp(-((th - np.pi / 2) / 0.7) ** 2)
        return base + tip

    return polar_curve(r, n, label=label)
