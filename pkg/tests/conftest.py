import numpy as np
import pytest

from fedcd.data import build_device_shards, gen_synthetic_classes, hierarchical_specs
from fedcd.seeding import stream


def tiny_shards(n_classes=4, devices_per_archetype=1, samples=60, dim=5, seed=0, spread=3.0):
    g = gen_synthetic_classes(n_classes, dim, 200, spread, stream(seed, "data"))
    specs = hierarchical_specs(n_classes=n_classes, n_meta=2,
                               devices_per_archetype=devices_per_archetype, seed=seed)
    return build_device_shards(g, specs, samples, 0.2, 0.2, seed)


@pytest.fixture
def shards4():
    return tiny_shards()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion and print it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
