import json
import logging

import numpy as np
import pytest

from src.utils.logs import configure_logging, format_event, log_event
from src.utils.timer import ThroughputCounter


class FakeClock:
    def __init__(self, *times):
        self.times = list(times)

    def __call__(self):
        return self.times.pop(0)


def test_throughput_counter():
    counter = ThroughputCounter(clock=FakeClock(10.0, 11.0, 12.0, 12.0)).start()
    counter.update(100)
    counter.update(300)
    assert counter.stop() == 2.0
    assert counter.rate == 200.0


def test_idle_counter_reports_zero_rate():
    with ThroughputCounter(clock=FakeClock(5.0, 5.0)) as counter:
        pass
    assert counter.rate == 0.0


def test_events_are_single_json_lines(caplog):
    logger = logging.getLogger("lexgrad.test")
    with caplog.at_level(logging.INFO, logger="lexgrad.test"):
        log_event(logger, "selection", generation=np.int64(3), trace=(4, 2))
    payload = json.loads(caplog.records[0].getMessage())
    assert payload == {"event": "selection", "generation": 3, "trace": [4, 2]}
    assert list(json.loads(format_event("x", b=1, a=2))) == ["event", "b", "a"]


def test_unknown_log_level():
    with pytest.raises(ValueError):
        configure_logging("LOUD")
