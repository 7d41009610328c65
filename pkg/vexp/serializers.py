from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from typing import IO, Any, Protocol, runtime_checkable

import numpy as np
from exceptiongroup import ExceptionGroup

from vexp.errors import GridError, GridFileError, JumpSetError
from vexp.grid import GridDomain, GridFunction
from vexp.variation import Jump1D, JumpRecord, JumpSegment


@runtime_checkable
class Serializer(Protocol):
    def serialize(self, obj: Any) -> str: ...

    def deserialize(self, data: str) -> Any: ...


def format_number(x: float) -> str:
    """Deterministic decimal text: 12 significant digits, ``inf``/``-inf``/``nan``."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x + 0.0, ".12g")


def _exact(x: float) -> str:
    return repr(float(x) + 0.0)


def write_csv(stream: IO[str], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])


def _cell(value: Any) -> Any:
    if isinstance(value, bool) or not isinstance(value, (float, int, np.floating)):
        return value
    return format_number(value)


def _raise_all(errors: list[GridFileError]) -> None:
    if len(errors) == 1:
        raise errors[0]
    if errors:
        raise ExceptionGroup(f"{len(errors)} malformed lines", errors)


def _parse_floats(tokens: Sequence[str], line: int) -> list[float]:
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise GridFileError(line, f"not a number in {' '.join(tokens)!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise GridFileError(line, "values must be finite")
    return values


class GridFunctionSerializer(Serializer):
    """
    Text format: header ``dim m N_1 [N_2] a_1 b_1 [a_2 b_2]``, then one node per line in
    row-major order with ``m`` values.
    """

    def serialize(self, obj: GridFunction) -> str:
        domain = obj.domain
        header = [str(domain.dim), str(obj.codim), *(str(n) for n in domain.cells)]
        header += [_exact(v) for extent in domain.extents for v in extent]
        lines = [" ".join(header)]
        for row in obj.values.reshape(-1, obj.codim):
            lines.append(" ".join(_exact(v) for v in row))
        return "\n".join(lines) + "\n"

    def deserialize(self, data: str) -> GridFunction:
        lines = data.splitlines()
        if not lines or not lines[0].strip():
            raise GridFileError(1, "missing header")
        domain, codim = self._header(lines[0].split())
        body = lines[1:]
        while body and not body[-1].strip():
            body.pop()
        errors: list[GridFileError] = []
        values = np.zeros((domain.node_count, codim))
        for index, text in enumerate(body):
            line = index + 2
            if index >= domain.node_count:
                errors.append(GridFileError(line, f"more than {domain.node_count} nodes"))
                break
            tokens = text.split()
            if len(tokens) != codim:
                errors.append(
                    GridFileError(line, f"expected {codim} values, got {len(tokens)}")
                )
                continue
            try:
                values[index] = _parse_floats(tokens, line)
            except GridFileError as error:
                errors.append(error)
        if len(body) < domain.node_count:
            errors.append(
                GridFileError(
                    len(body) + 2,
                    f"expected {domain.node_count} nodes, got {len(body)}",
                )
            )
        _raise_all(errors)
        return GridFunction(domain, values.reshape((*domain.node_shape, codim)))

    @staticmethod
    def _header(tokens: list[str]) -> tuple[GridDomain, int]:
        try:
            dim = int(tokens[0])
            codim = int(tokens[1])
        except (IndexError, ValueError):
            raise GridFileError(1, "header must start with integers dim and m") from None
        if dim not in (1, 2) or codim < 1:
            raise GridFileError(1, f"unsupported dim={dim} or m={codim}")
        if len(tokens) != 2 + 3 * dim:
            raise GridFileError(1, f"header needs {2 + 3 * dim} tokens, got {len(tokens)}")
        try:
            cells = tuple(int(t) for t in tokens[2 : 2 + dim])
        except ValueError:
            raise GridFileError(1, "cell counts must be integers") from None
        bounds = _parse_floats(tokens[2 + dim :], 1)
        extents = tuple((bounds[2 * k], bounds[2 * k + 1]) for k in range(dim))
        try:
            return GridDomain(extents, cells), codim
        except GridError as error:
            raise GridFileError(1, str(error)) from None


class JumpSetSerializer(Serializer):
    """
    One jump per line: ``x j_1 … j_m`` in 1D, ``x1 y1 x2 y2 nu_x nu_y j_1 … j_m`` in 2D.
    Blank lines and ``#`` comments are skipped.
    """

    def __init__(self, dim: int, codim: int):
        if dim not in (1, 2) or codim < 1:
            raise JumpSetError(f"Unsupported jump set with dim={dim}, m={codim}")
        self.dim: int = dim
        self.codim: int = codim

    @property
    def width(self) -> int:
        return (1 if self.dim == 1 else 6) + self.codim

    def serialize(self, obj: Sequence[JumpRecord]) -> str:
        lines = []
        for record in obj:
            if isinstance(record, Jump1D):
                head = [record.location]
            else:
                head = [*record.start, *record.end, *record.normal]
            lines.append(" ".join(_exact(v) for v in [*head, *record.jump]))
        return "".join(line + "\n" for line in lines)

    def deserialize(self, data: str) -> list[JumpRecord]:
        records: list[JumpRecord] = []
        errors: list[GridFileError] = []
        for index, text in enumerate(data.splitlines()):
            line = index + 1
            content = text.split("#", 1)[0].strip()
            if not content:
                continue
            tokens = content.split()
            if len(tokens) != self.width:
                errors.append(
                    GridFileError(line, f"expected {self.width} values, got {len(tokens)}")
                )
                continue
            try:
                values = _parse_floats(tokens, line)
            except GridFileError as error:
                errors.append(error)
                continue
            if self.dim == 1:
                records.append(Jump1D(values[0], tuple(values[1:])))
            else:
                records.append(
                    JumpSegment(
                        (values[0], values[1]),
                        (values[2], values[3]),
                        (values[4], values[5]),
                        tuple(values[6:]),
                    )
                )
        _raise_all(errors)
        return records
