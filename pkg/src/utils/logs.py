import json
import logging

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level="INFO"):
    """
    Route every module logger to stderr.

    Called once by the command-line entry point; library code only
    creates loggers.
    """
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown log level {level!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)


def _plain(value):
    # numpy scalars and tuples do not serialize on their own
    if hasattr(value, "item") and callable(value.item):
        return value.item()
    if isinstance(value, (tuple, set)):
        return list(value)
    return str(value)


def format_event(event, **fields):
    """One-line JSON object with the event name first"""
    payload = {"event": event}
    payload.update(fields)
    return json.dumps(payload, default=_plain, sort_keys=False)


def log_event(logger, event, level=logging.INFO, **fields):
    """Emit a structured event as a single JSON log line"""
    if logger.isEnabledFor(level):
        logger.log(level, format_event(event, **fields))
