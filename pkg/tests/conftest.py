import numpy as np
import pytest

from rfadv.engine import GRU, LSTM, AddChannel, Conv2D, Dense, GlobalAvgPool, MaxPool2D, Network, ReLU, Residual, Softmax, TimeMajor


def _net(layers, shape, seed=1):
    return Network(layers, shape, rng=np.random.default_rng(seed))


def make_layer_cases():
    """One small network per layer kind; inputs stay at or below 64 elements.

    Values are (network, input shape, finite-difference step).  The step is
    1e-4: at 1e-3 the O(h^2) truncation term already reaches a few 1e-4 in
    relative terms on near-zero recurrent weight gradients, and ReLU/max-pool
    kinks can fall inside +-h.
    """
    return {
        "dense": (_net([TimeMajor(), GlobalAvgPool(), Dense(3), Softmax()], (4, 5)), (2, 4, 5), 1e-4),
        "conv+relu+maxpool": (_net([AddChannel(), Conv2D(3, 3), ReLU(), MaxPool2D(), Conv2D(2, 1), GlobalAvgPool(),
                                    Dense(3), Softmax()], (4, 6)), (2, 4, 6), 1e-4),
        "conv7": (_net([AddChannel(), Conv2D(2, 7), GlobalAvgPool(), Dense(3), Softmax()], (4, 8)), (1, 4, 8), 1e-4),
        "residual+projection": (_net([AddChannel(), Residual([Conv2D(2, 3), ReLU(), Conv2D(3, 3)], Conv2D(3, 1)),
                                      ReLU(), GlobalAvgPool(), Dense(3), Softmax()], (4, 4)), (2, 4, 4), 1e-4),
        "residual-identity": (_net([AddChannel(), Conv2D(2, 3), Residual([Conv2D(2, 3), ReLU(), Conv2D(2, 3)]),
                                    GlobalAvgPool(), Dense(3), Softmax()], (4, 4)), (2, 4, 4), 1e-4),
        "lstm": (_net([TimeMajor(), LSTM(8), GlobalAvgPool(), Dense(3), Softmax()], (4, 5)), (2, 4, 5), 1e-4),
        "lstm-stack": (_net([TimeMajor(), LSTM(4), LSTM(6), GlobalAvgPool(), Dense(3), Softmax()], (4, 5)), (2, 4, 5), 1e-4),
        "gru": (_net([TimeMajor(), GRU(8), GlobalAvgPool(), Dense(3), Softmax()], (4, 5)), (2, 4, 5), 1e-4),
        "gru-stack": (_net([TimeMajor(), GRU(8), GRU(4), GlobalAvgPool(), Dense(3), Softmax()], (4, 5)), (2, 4, 5), 1e-4),
    }


@pytest.fixture(scope="session")
def layer_cases():
    return make_layer_cases()


ACCEPTANCE_LINES: list = []


def record_criterion(num: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES[:] = [l for l in ACCEPTANCE_LINES if not l.startswith(f"criterion {num:>2} ")]
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
