from typing import Optional


class ObstacleSpdeError(Exception):
    """Base class for every error raised by the solver package."""


class InvalidInputError(ObstacleSpdeError, ValueError):
    """入力が前提条件を満たさない (rejected input)."""


class ConfigError(InvalidInputError):
    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


class HypothesisError(InvalidInputError):
    """Comparison hypotheses fail somewhere on the grid."""

    def __init__(self, message: str, node: Optional[int] = None, step: Optional[int] = None):
        where = []
        if step is not None:
            where.append(f"step={step}")
        if node is not None:
            where.append(f"node={node}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.node = node
        self.step = step


class SchemeError(ObstacleSpdeError, RuntimeError):
    def __init__(self, message: str, step: int, node: int):
        super().__init__(f"{message} at step={step}, node={node}")
        self.step = step
        self.node = node
