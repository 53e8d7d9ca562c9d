import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def step_edge(h=16, w=16, lo=0, hi=255):
    img = np.full((h, w), lo, dtype=np.uint8)
    img[:, w // 2 :] = hi
    return img


def white_square(size=40, lo=0, hi=255, x0=12, y0=12, side=16):
    img = np.full((size, size), lo, dtype=np.uint8)
    img[y0 : y0 + side, x0 : x0 + side] = hi
    return img


def checkerboard(cells, cell=8):
    yy, xx = np.indices((cells * cell, cells * cell))
    return (((yy // cell) + (xx // cell)) % 2 * 255).astype(np.uint8)


def arma_loop(phi, theta, n, seed, mean=0.0, burn=300):
    """Plain-loop ARMA simulator, kept independent of the library's lfilter path."""
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n + burn)
    x = np.zeros(n + burn)
    for t in range(n + burn):
        acc = e[t]
        for i, ph in enumerate(phi, 1):
            if t - i >= 0:
                acc += ph * x[t - i]
        for j, th in enumerate(theta, 1):
            if t - j >= 0:
                acc += th * e[t - j]
        x[t] = acc
    return x[burn:] + mean


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
