from __future__ import annotations

import io
import math

import numpy as np
import pytest
from exceptiongroup import ExceptionGroup

from vexp.errors import GridFileError, JumpSetError
from vexp.grid import GridDomain, GridFunction
from vexp.serializers import (
    GridFunctionSerializer,
    JumpSetSerializer,
    Serializer,
    format_number,
    write_csv,
)
from vexp.variation import Jump1D, JumpSegment

GRID_1D = "1 1 4 0 1\n0\n0.25\n0.5\n0.75\n1\n"


@pytest.mark.parametrize(
    "value, text",
    [
        (2.0, "2"),
        (0.5, "0.5"),
        (-0.0, "0"),
        (1 / 3, "0.333333333333"),
        (1e-20, "1e-20"),
        (math.inf, "inf"),
        (-math.inf, "-inf"),
        (math.nan, "nan"),
    ],
)
def test_format_number(value: float, text: str):
    assert format_number(value) == text


def test_write_csv():
    stream = io.StringIO()
    write_csv(stream, ["name", "value", "pass"], [["a", 2.0, True], ["b", np.float64(0.1), False]])
    assert stream.getvalue() == "name,value,pass\na,2,True\nb,0.1,False\n"


def test_serializers_follow_protocol():
    assert isinstance(GridFunctionSerializer(), Serializer)
    assert isinstance(JumpSetSerializer(1, 1), Serializer)


class TestGridFunctionSerializer:
    @pytest.fixture
    def serializer(self) -> GridFunctionSerializer:
        return GridFunctionSerializer()

    def test_deserialize(self, serializer: GridFunctionSerializer):
        u = serializer.deserialize(GRID_1D)
        assert u.domain == GridDomain.interval(0.0, 1.0, 4)
        np.testing.assert_array_equal(u.values[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_serialize_is_exact(self, serializer: GridFunctionSerializer):
        domain = GridDomain.square(0.0, 1.0, 4)
        u = GridFunction.from_callable(domain, lambda x, y: np.stack([np.sin(x + y), x / 3], axis=-1))
        text = serializer.serialize(u)
        assert text.splitlines()[0] == "2 2 4 4 0.0 1.0 0.0 1.0"
        assert len(text.splitlines()) == 1 + 25
        np.testing.assert_array_equal(serializer.deserialize(text).values, u.values)

    def test_trailing_blank_lines(self, serializer: GridFunctionSerializer):
        assert serializer.deserialize(GRID_1D + "\n\n").domain.node_count == 5

    def test_missing_header(self, serializer: GridFunctionSerializer):
        with pytest.raises(GridFileError) as excinfo:
            serializer.deserialize("")
        assert excinfo.value.line == 1

    @pytest.mark.parametrize(
        "header",
        ["x 1 4 0 1", "3 1 4 4 4 0 1 0 1 0 1", "1 1 4 0", "1 1 a 0 1", "1 1 2 0 1", "1 1 4 1 0"],
    )
    def test_bad_header(self, serializer: GridFunctionSerializer, header: str):
        with pytest.raises(GridFileError, match="^line 1: "):
            serializer.deserialize(header + "\n0\n0\n0\n0\n0\n")

    def test_bad_value_reports_line(self, serializer: GridFunctionSerializer):
        with pytest.raises(GridFileError) as excinfo:
            serializer.deserialize("1 1 4 0 1\n0\nx\n0\n0\n0\n")
        assert excinfo.value.line == 3
        assert str(excinfo.value).startswith("line 3: ")

    def test_non_finite_value(self, serializer: GridFunctionSerializer):
        with pytest.raises(GridFileError, match="finite"):
            serializer.deserialize("1 1 4 0 1\n0\nnan\n0\n0\n0\n")

    def test_missing_nodes(self, serializer: GridFunctionSerializer):
        with pytest.raises(GridFileError) as excinfo:
            serializer.deserialize("1 1 4 0 1\n0\n0\n0\n")
        assert excinfo.value.line == 5

    def test_extra_nodes(self, serializer: GridFunctionSerializer):
        with pytest.raises(GridFileError, match="more than 5 nodes"):
            serializer.deserialize(GRID_1D + "2\n")

    def test_all_bad_lines_are_reported(self, serializer: GridFunctionSerializer):
        with pytest.raises(ExceptionGroup) as excinfo:
            serializer.deserialize("1 1 4 0 1\n0\nx\n0 1\n0\n0\n")
        assert [e.line for e in excinfo.value.exceptions] == [3, 4]


class TestJumpSetSerializer:
    def test_one_dimensional(self):
        serializer = JumpSetSerializer(1, 2)
        records = serializer.deserialize("# location jump\n0.5 1 -2  # trailing\n\n-0.25 0 3\n")
        assert records == [Jump1D(0.5, (1.0, -2.0)), Jump1D(-0.25, (0.0, 3.0))]
        assert serializer.serialize(records) == "0.5 1.0 -2.0\n-0.25 0.0 3.0\n"

    def test_segments(self):
        serializer = JumpSetSerializer(2, 1)
        records = serializer.deserialize("0.5 0 0.5 1 1 0 2\n")
        assert records == [JumpSegment((0.5, 0.0), (0.5, 1.0), (1.0, 0.0), (2.0,))]

    def test_empty(self):
        assert JumpSetSerializer(1, 1).deserialize("") == []
        assert JumpSetSerializer(1, 1).serialize([]) == ""

    def test_wrong_width(self):
        with pytest.raises(GridFileError, match="expected 2 values, got 3"):
            JumpSetSerializer(1, 1).deserialize("0.5 1 2\n")

    def test_all_bad_lines_are_reported(self):
        with pytest.raises(ExceptionGroup) as excinfo:
            JumpSetSerializer(1, 1).deserialize("a 1\n0.5 1\n0.5\n")
        assert [e.line for e in excinfo.value.exceptions] == [1, 3]

    @pytest.mark.parametrize("dim, codim", [(3, 1), (1, 0)])
    def test_rejects_layout(self, dim: int, codim: int):
        with pytest.raises(JumpSetError):
            JumpSetSerializer(dim, codim)
