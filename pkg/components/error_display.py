import sys


def _first_line(message: str) -> str:
    lines = str(message).strip().splitlines()
    return lines[0] if lines else ""


def display_validation_error(error_message: str, stream=None):
    """
    Print a usage or validation error as one line on stderr.

    Args:
        error_message: The error message to display
    """
    stream = stream or sys.stderr
    print(f"error: {_first_line(error_message)}", file=stream)


def display_runtime_error(error: Exception, stream=None):
    """
    Print a failed stage's cause as one line on stderr.

    Args:
        error: The exception that was raised
    """
    stream = stream or sys.stderr
    print(f"error: {type(error).__name__}: {_first_line(error)}", file=stream)


def display_warning_banner(message: str, stream=None):
    stream = stream or sys.stderr
    print(f"warning: {_first_line(message)}", file=stream)
