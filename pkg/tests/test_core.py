import io
import logging
import time

import pytest

from app.core.errors import (
    BoxParseError,
    ConfigurationError,
    InternalError,
    QueryError,
    RecordValidationError,
    TrainingDivergedError,
)
from app.core.logging import get_logger, run_logger, setup_logging
from app.core.task_queue import ShardQueue


@pytest.fixture
def captured():
    stream = io.StringIO()
    setup_logging("DEBUG", stream=stream)
    yield stream
    setup_logging()


def test_context_fields_default_and_run_id(captured):
    get_logger("lab.test").info("plain")
    run_logger("lab.test", "run-7").info("tagged", extra={"step": 3})
    lines = captured.getvalue().splitlines()
    assert "run=- step=- | plain" in lines[0]
    assert "run=run-7 step=3 | tagged" in lines[1]


def test_unknown_level_falls_back_to_info(captured):
    setup_logging("chatty", stream=captured)
    assert logging.getLogger().level == logging.INFO


def test_exit_codes():
    assert ConfigurationError("x").exit_code == 2
    assert BoxParseError("bad", position=4).exit_code == 2
    assert isinstance(BoxParseError("bad", position=4), RecordValidationError)
    assert InternalError("x").exit_code == 1
    assert TrainingDivergedError("nan", diagnostics_path=None).exit_code == 1
    err = QueryError("no routed tokens")
    assert isinstance(err, KeyError) and str(err) == "no routed tokens"


def test_shard_queue_keeps_input_order():
    def slow_square(x):
        time.sleep(0.001 * (10 - x))
        return x * x

    assert ShardQueue(concurrency=4).map_ordered(slow_square, range(10)) == [x * x for x in range(10)]
    assert ShardQueue(concurrency=1).map_ordered(slow_square, range(3)) == [0, 1, 4]
    assert ShardQueue(concurrency=3).map_ordered(slow_square, []) == []


def test_shard_queue_reraises_first_failure():
    def fail_on_odd(x):
        if x % 2:
            raise ValueError(f"odd {x}")
        return x

    with pytest.raises(ValueError, match="odd 1"):
        ShardQueue(concurrency=3).map_ordered(fail_on_odd, range(6))
