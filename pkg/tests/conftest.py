import numpy as np
import pytest

from safecmdp.cmdp import Policy, TabularCmdp, sample_policy
from safecmdp.envs import build_random


def mc_returns(model: TabularCmdp, policy: Policy, cost, n: int, rng, transitions=None):
    """Vectorized Monte-Carlo returns; independent of the package's sampler."""
    S, A, H = model.dims
    P = model.transitions if transitions is None else transitions
    cost = np.asarray(cost)
    s = np.full(n, model.initial_state)
    total = np.zeros(n)
    visits = np.zeros((H, S))
    for h in range(H):
        np.add.at(visits[h], s, 1)
        a = _vector_draw(policy.probs[h, s], rng)
        total += cost[s, a]
        s = _vector_draw(P[s, a], rng)
    return total, visits / n


def _vector_draw(probs, rng):
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))[:, None] * cdf[:, -1:]
    return np.minimum((u >= cdf).sum(axis=1), probs.shape[1] - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_model():
    return build_random(7, 3, 2, 4, budget_frac=0.5)


def random_instance(seed, S=3, A=2, H=4, budget_frac=0.5):
    model = build_random(seed, S, A, H, budget_frac)
    policy = sample_policy(np.random.default_rng(seed + 1000), H, S, A)
    return model, policy


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """``record(number, ok, detail)`` prints one PASS/FAIL line and keeps it for the summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        return ok

    return record
