"""Exception hierarchy shared by every stage.

Each error carries the process exit code the CLI reports for it.
"""


class CphenoError(Exception):
    exit_code = 2


class InputError(CphenoError):
    """Bad or missing input file, malformed record."""

    exit_code = 1


class StructuralError(InputError):
    """Ontology structure violation: cycle, dangling is_a target, duplicate id."""


class ConfigError(InputError):
    pass


class ParameterError(CphenoError, ValueError):
    """Argument outside its documented domain."""

    exit_code = 1


class PreconditionError(ParameterError):
    pass


class UnknownTermError(CphenoError, KeyError):
    exit_code = 1

    def __init__(self, term_id):
        super().__init__(term_id)
        self.term_id = term_id

    def __str__(self):
        return f"unknown term id: {self.term_id}"


class ClientError(CphenoError):
    """Transport failure talking to an external model endpoint."""


class StageError(CphenoError):
    exit_code = 2

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


class TrainingDivergedError(StageError):
    def __init__(self, stage, step, dump_path=None):
        detail = f"non-finite loss at step {step}"
        if dump_path:
            detail += f" (batch dumped to {dump_path})"
        super().__init__(stage, detail)
        self.step = step
        self.dump_path = dump_path


class InvariantViolation(CphenoError):
    exit_code = 3
