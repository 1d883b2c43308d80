from __future__ import annotations

import numpy as np
import pytest

from girdershm.signals import PassageRecord


def make_record(samples, pid="p1", channel="L4-P3b", speed=360.0, condition="baseline",
                damage=None) -> PassageRecord:
    return PassageRecord(
        passage_id=pid,
        channel_id=channel,
        samples=np.asarray(samples, dtype=np.float64),
        speed=speed,
        sample_rate=1000.0,
        train_weight_class="W100",
        irregularity_label="uic_good",
        condition=condition,
        damage_spec=damage,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
