"""Offline stand-in for MNIST: noisy renderings of ten stroke templates."""

import numpy as np

SIZE = 28

# Seven-segment layout plus two diagonals, so every class differs from
# every other in at least two strokes.
_SEGMENTS = {
    "top": ((5, 8), (5, 19)),
    "mid": ((14, 8), (14, 19)),
    "bot": ((23, 8), (23, 19)),
    "ul": ((5, 8), (14, 8)),
    "ur": ((5, 19), (14, 19)),
    "ll": ((14, 8), (23, 8)),
    "lr": ((14, 19), (23, 19)),
    "diag": ((5, 19), (23, 8)),
    "bar": ((5, 14), (23, 14)),
}
_DIGITS = {
    0: ("top", "bot", "ul", "ur", "ll", "lr"),
    1: ("bar",),
    2: ("top", "ur", "mid", "ll", "bot"),
    3: ("top", "ur", "mid", "lr", "bot"),
    4: ("ul", "ur", "mid", "lr"),
    5: ("top", "ul", "mid", "lr", "bot"),
    6: ("top", "ul", "ll", "mid", "lr", "bot"),
    7: ("top", "diag"),
    8: ("top", "mid", "bot", "ul", "ur", "ll", "lr"),
    9: ("top", "ul", "ur", "mid", "lr"),
}


def _stroke(img, a, b, width=1.6):
    ys, xs = np.mgrid[0:SIZE, 0:SIZE]
    (y0, x0), (y1, x1) = a, b
    d = np.array([y1 - y0, x1 - x0], dtype=float)
    t = ((ys - y0) * d[0] + (xs - x0) * d[1]) / max(d @ d, 1e-9)
    t = np.clip(t, 0.0, 1.0)
    dist = np.hypot(ys - (y0 + t * d[0]), xs - (x0 + t * d[1]))
    np.maximum(img, np.clip(width + 0.5 - dist, 0.0, 1.0), out=img)


def templates():
    out = np.zeros((10, SIZE, SIZE))
    for digit, segs in _DIGITS.items():
        for s in segs:
            _stroke(out[digit], *_SEGMENTS[s])
    return out


_TEMPLATES = templates()


def render(digit, rng, noise=0.15):
    dy, dx = rng.integers(-2, 3, size=2)
    img = np.roll(_TEMPLATES[digit], (dy, dx), axis=(0, 1))
    img = img * rng.uniform(0.7, 1.0) + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_synthetic_digits(seed, count):
    """``(images[count, 28, 28], labels[count])``; class counts differ by at most one."""
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    images = np.stack([render(int(d), rng) for d in labels]) if count else np.zeros((0, SIZE, SIZE))
    return images, labels.astype(np.int64)
