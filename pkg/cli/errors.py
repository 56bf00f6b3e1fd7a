"""
Command failures and their exit codes
"""

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_EMPTY = 4
EXIT_CHECK = 5


# Carries the process exit code together with the message shown to the operator
class CommandError(Exception):
    """Raised by a command to stop with a specific exit code"""

    def __init__(self, exit_code: int, detail: str):
        super().__init__(detail)
        self.exit_code = exit_code
        self.detail = detail
