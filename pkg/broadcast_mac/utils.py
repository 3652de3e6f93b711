"""Utility functions used throughout the code, kept here to allow re use and/or minimize clutter elsewhere."""

import logging
from typing import List, Optional, Sequence, Tuple

from apprise import NotifyType

from broadcast_mac import notifications

logger = logging.getLogger(__name__)

# Absolute tolerance for every equality/feasibility comparison in the package
ATOL = 1e-12


class BroadcastMacError(Exception):
    """Base class for errors raised by `broadcast_mac`."""


class DomainError(BroadcastMacError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class GridError(DomainError):
    """The requested simplex grid resolution is not usable."""


class ConfigError(BroadcastMacError):
    """Run configuration is invalid or incomplete.

    Args:
        message (str): What is wrong with the configuration
        position (Tuple[int, int]): Optional (line, column) of a parse error
    """

    def __init__(self, message: str, position: Optional[Tuple[int, int]] = None):
        """Init."""
        super().__init__(message)
        self.message = message
        self.position = position

    def __str__(self):
        """Turns exception into a human readable form."""
        if self.position is None:
            return self.message
        line, column = self.position
        return f"{self.message} (line {line}, column {column})"


class InfeasibleRatesError(BroadcastMacError):
    """A rate vector lies outside the region it is required to be in.

    Args:
        violations (Sequence[str]): Provenance tags of the violated constraints
    """

    def __init__(self, violations: Sequence[str]):
        """Init."""
        super().__init__()
        self.violations: List[str] = list(violations)

    def __str__(self):
        """Turns exception into a human readable form."""
        return "Rates are infeasible, violated: " + ", ".join(self.violations)


def add_logging_level(name: str, level: int, method: Optional[str] = None) -> None:
    """Registers `name` as a logging level at `level`, with a logging method on loggers, adapters and the module.

    The method is called `name.lower()` unless `method` is given. Registering the same level twice does nothing;
    any other clash with an existing attribute raises `AttributeError`.
    """
    method = method or name.lower()
    if getattr(logging, name, None) == level:
        return
    for owner, attr in ((logging, name), (logging, method), (logging.getLoggerClass(), method)):
        if hasattr(owner, attr):
            raise AttributeError(f"{attr} is already defined on {owner.__name__}")

    def log_on_logger(self, message, *args, **kwargs):
        if self.isEnabledFor(level):
            self._log(level, message, args, **kwargs)

    def log_on_root(message, *args, **kwargs):
        logging.log(level, message, *args, **kwargs)

    def log_on_adapter(self, message, *args, **kwargs):
        self.log(level, message, *args, **kwargs)

    logging.addLevelName(level, name)
    setattr(logging, name, level)
    setattr(logging.getLoggerClass(), method, log_on_logger)
    setattr(logging, method, log_on_root)
    setattr(logging.LoggerAdapter, method, log_on_adapter)


def add_color_to_record_levelname(record):
    """Colorizes logging level names."""
    levelno = record.levelno
    if levelno >= logging.ERROR:
        color = "\x1b[31;1m"  # RED
    elif levelno >= logging.WARNING:
        color = "\x1b[33;1m"  # YELLOW
    elif levelno >= logging.INFO:
        color = "\x1b[32;1m"  # GREEN
    elif levelno >= logging.DEBUG:
        color = "\x1b[36;1m"  # CYAN
    else:
        color = "\x1b[35;1m"  # MAGENTA

    return f"{color}{record.levelname}\x1b[0m"


class AppriseStreamHandler(logging.StreamHandler):
    """Logging handler that also sends logging output to configured Apprise notifiers."""

    def __init__(self, color_logging: bool, *args, **kwargs):
        """Init.

        Args:
            color_logging (bool): If true logging levels will be colorized
        """
        super().__init__(*args, **kwargs)
        self.color_logging = color_logging

    def _emit_apprise(self, record):
        if not notifications.notifier.servers:
            return

        logging_map = {
            logging.ERROR: NotifyType.FAILURE,
            logging.WARNING: NotifyType.WARNING,
        }
        notifications.notifier.notify(
            body=self.format(record),
            title=record.levelname.strip(),
            notify_type=logging_map.get(record.levelno, NotifyType.INFO),
            tag=[logging.getLevelName(record.levelno)],
        )

    def _emit_stream(self, record):
        record.levelname = f"{record.levelname:^11s}"  # Pad level name to max width
        if self.color_logging:
            record.levelname = add_color_to_record_levelname(record)

        msg = self.format(record)
        self.stream.write(msg + self.terminator)
        self.flush()

    def emit(self, record):
        """Emit log to stderr and apprise."""
        try:
            self._emit_apprise(record)
        except RecursionError:  # See issue 36272
            raise
        except Exception:
            self.handleError(record)

        try:
            self._emit_stream(record)
        except RecursionError:  # See issue 36272
            raise
        except Exception:
            self.handleError(record)


def create_logging_handler(format, color_logging):
    """Constructs apprise logging handler for the given format."""
    date_format = "%Y-%m-%d %H:%M:%S"
    style = "{"

    sh = AppriseStreamHandler(color_logging)
    formatter = logging.Formatter(format, date_format, style)
    sh.setFormatter(formatter)
    return sh


def setup_logging(verbosity: int, color_logging: bool = False, apprise_notifiers: Sequence[str] = ()) -> None:
    """Configures loggers to provided the desired level of verbosity.

    Verbosity 0: Only log info messages created by `broadcast-mac`, and all warnings
    Verbosity 1: Log info & debug messages created by `broadcast-mac`, and all warnings
    Verbosity 2: Also log per-allocation and per-block traces (EXTRA_DEBUG)
    Verbosity 3: As 2, plus info messages from other libraries
    Verbosity 4+: As 2, plus debug messages from other libraries

    Args:
        verbosity (int): The desired level of verbosity
        color_logging (bool): If colors should be used in the log (default=False)
        apprise_notifiers (Sequence[str]): Notification services to hook into the logger

    """
    add_logging_level("EXTRA_DEBUG", logging.DEBUG - 1)

    for notifier in apprise_notifiers:
        notifications.add_notification_service(notifier)

    format = "{asctime} [{levelname:^11s}] {name:<32} :  {message}"
    sh = create_logging_handler(format, color_logging)

    package_logger = logging.getLogger("broadcast_mac")
    for handler in list(package_logger.handlers):
        if isinstance(handler, AppriseStreamHandler):
            package_logger.removeHandler(handler)
    package_logger.addHandler(sh)
    package_logger.propagate = False

    if verbosity == 0:
        logging.basicConfig(level=logging.WARN, handlers=[sh])
        package_logger.setLevel(logging.INFO)
    elif verbosity == 1:
        logging.basicConfig(level=logging.WARN, handlers=[sh])
        package_logger.setLevel(logging.DEBUG)
    elif verbosity == 2:
        logging.basicConfig(level=logging.WARN, handlers=[sh])
        package_logger.setLevel(logging.EXTRA_DEBUG)  # type: ignore
    elif verbosity == 3:
        logging.basicConfig(level=logging.INFO, handlers=[sh])
        package_logger.setLevel(logging.EXTRA_DEBUG)  # type: ignore
    else:
        logging.basicConfig(level=logging.DEBUG, handlers=[sh])
        package_logger.setLevel(logging.EXTRA_DEBUG)  # type: ignore


def extra_debug(log: logging.Logger, message: str) -> None:
    """Logs at EXTRA_DEBUG when the level has been registered, otherwise drops the message."""
    level = getattr(logging, "EXTRA_DEBUG", None)
    if level is not None and log.isEnabledFor(level):
        log.log(level, message)


def parse_float_list(value: str) -> Tuple[float, ...]:
    """Parses a comma separated list of numbers, e.g. `0.25,1`."""
    try:
        return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"`{value}` is not a comma separated list of numbers") from None
