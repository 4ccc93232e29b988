import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_conv2d(x, w, b, pad, dil):
    """Direct nested-loop cross-correlation, stride 1."""
    B, cin, T, F = x.shape
    cout, _, kt, kf = w.shape
    pt, pf = pad
    dt, df = dil
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (pf, pf)))
    To = T + 2 * pt - dt * (kt - 1)
    Fo = F + 2 * pf - df * (kf - 1)
    out = np.zeros((B, cout, To, Fo))
    for n in range(B):
        for o in range(cout):
            for t in range(To):
                for f in range(Fo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(cin):
                        for i in range(kt):
                            for j in range(kf):
                                acc += w[o, c, i, j] * xp[n, c, t + i * dt, f + j * df]
                    out[n, o, t, f] = acc
    return out


# ---- acceptance bookkeeping ------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        _CRITERIA[self.number] = ("FAIL", self.title, "did not finish")
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail if exc_type is None else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        _CRITERIA[self.number] = (status, self.title, detail)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d}: {title}" + (f" ({detail})" if detail else ""))
