import numpy as np
import pytest

from metafuse.image import Image, KernelField, PsfGrid


def random_kernels(rng, gh, gw, c, k, normalized=True):
    ker = rng.random((gh, gw, c, k, k))
    if normalized:
        ker /= ker.sum(axis=(-2, -1), keepdims=True)
    return ker


def random_grid(rng, h, w, gh, gw, c, k) -> PsfGrid:
    return PsfGrid(random_kernels(rng, gh, gw, c, k), w, h)


def oracle_axis_weight(pos, n, g):
    # weight of each anchor along one axis at pixel ``pos``, written out per case
    centers = [(a + 0.5) * n / g - 0.5 for a in range(g)]
    out = [0.0] * g
    if g == 1 or pos <= centers[0]:
        out[0] = 1.0
    elif pos >= centers[-1]:
        out[-1] = 1.0
    else:
        for a in range(g - 1):
            if centers[a] <= pos <= centers[a + 1]:
                t = (pos - centers[a]) / (centers[a + 1] - centers[a])
                out[a], out[a + 1] = 1.0 - t, t
                break
    return out


def oracle_sv_convolve(img: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Nested-loop reference: interpolate the kernel at each pixel, then
    sum k[dy,dx] * img[y-dy+r, x-dx+r] with clamped (replicate) indices."""
    C, H, W = img.shape
    gh, gw, kc, k, _ = kernels.shape
    r = k // 2
    out = np.zeros_like(img)
    for y in range(H):
        wy = oracle_axis_weight(y, H, gh)
        for x in range(W):
            wx = oracle_axis_weight(x, W, gw)
            for c in range(C):
                kern = np.zeros((k, k))
                for a in range(gh):
                    for b in range(gw):
                        kern += wy[a] * wx[b] * kernels[a, b, c if kc > 1 else 0]
                acc = 0.0
                for dy in range(k):
                    for dx in range(k):
                        yy = min(max(y - dy + r, 0), H - 1)
                        xx = min(max(x - dx + r, 0), W - 1)
                        acc += kern[dy, dx] * img[c, yy, xx]
                out[c, y, x] = acc
    return out


def dense_matrix(fn, shape):
    n = int(np.prod(shape))
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(fn(Image(e.reshape(shape))).data.ravel())
    return np.stack(cols, axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
