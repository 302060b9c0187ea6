"""Source spans, diagnostics and the exceptions that carry them."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    col: int
    end_line: int
    end_col: int

    def __post_init__(self) -> None:
        if (self.end_line, self.end_col) < (self.line, self.col):
            raise ValueError("span ends before it starts")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    message: str
    span: SourceSpan | None = None

    def render(self, default_file: str = "<input>") -> str:
        where = str(self.span) if self.span else f"{default_file}:1:1"
        return f"{where}: {self.severity}: {self.message}"

    def __str__(self) -> str:
        return self.render()


def error(message: str, span: SourceSpan | None = None) -> Diagnostic:
    return Diagnostic("error", message, span)


def warning(message: str, span: SourceSpan | None = None) -> Diagnostic:
    return Diagnostic("warning", message, span)


class DiagnosticError(Exception):
    """Raised by front ends; ``diagnostics`` holds every problem found."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(d.render() for d in self.diagnostics))


class ParseError(DiagnosticError):
    pass


class FormatError(DiagnosticError):
    """A byte stream is not a valid MBI document."""

    def __init__(self, message: str):
        super().__init__([error(message)])
