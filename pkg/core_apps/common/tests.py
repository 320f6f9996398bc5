import logging
from dataclasses import dataclass

import numpy as np
import pytest
from loguru import logger

from config import settings
from core_apps.common.models import SerializableModel, to_plain
from core_apps.common.renderers import CSVRenderer, JSONRenderer, format_cell
from core_apps.common.tasks import ordered_map
from interceptor import warning_summary


@dataclass
class _Report(SerializableModel):
    name: str
    values: np.ndarray
    hidden: float = 0.0


class TestToPlain:
    def test_numpy_values(self):
        assert to_plain(np.float64(1.5)) == 1.5
        assert to_plain(np.int32(3)) == 3
        assert to_plain(np.array([[1, 2], [3, 4]])) == [[1, 2], [3, 4]]
        assert to_plain(np.bool_(True)) is True

    def test_non_finite_sentinels(self):
        assert to_plain([np.nan, np.inf, -np.inf]) == ["nan", "inf", "-inf"]

    def test_complex(self):
        assert to_plain(1.0 - 2.0j) == {"re": 1.0, "im": -2.0}

    def test_dataclass(self):
        report = _Report(name="x", values=np.arange(3.0))
        assert report.as_dict() == {"name": "x", "values": [0.0, 1.0, 2.0], "hidden": 0.0}


class TestRenderers:
    """JSON and CSV writers."""

    def test_json_is_sorted_with_newline(self):
        text = JSONRenderer().render({"b": 1, "a": np.float64(0.5)}).decode()
        assert text.index('"a"') < text.index('"b"')
        assert text.endswith("\n")

    def test_json_wrap(self):
        text = JSONRenderer(object_label="run").render({"a": 1}, wrap=True).decode()
        assert '"run"' in text

    def test_json_rejects_nothing(self):
        with pytest.raises(ValueError):
            JSONRenderer().render(None)

    def test_csv_cells(self):
        assert format_cell(0.1) == "0.10000000000000001"
        assert format_cell(np.int64(7)) == "7"
        assert format_cell(False) == "false"

    def test_csv_row_length(self):
        with pytest.raises(ValueError):
            CSVRenderer(("a", "b")).render([(1,)])

    def test_csv_write(self, tmp_path):
        target = CSVRenderer(("t", "value")).write([(0.0, 1.0)], tmp_path / "out" / "x.csv")
        assert target.read_text() == "t,value\n0,1\n"


class TestOrderedMap:
    def test_serial_keeps_order(self):
        assert ordered_map(abs, [-3, 1, -2]) == [3, 1, 2]

    def test_pool_keeps_order(self):
        assert ordered_map(abs, list(range(-6, 0)), workers=2) == [6, 5, 4, 3, 2, 1]


class TestInterceptor:
    """stdlib logging routed into loguru."""

    def test_stdlib_record_reaches_loguru(self):
        assert settings.VERSION
        messages = []
        sink = logger.add(messages.append, level="DEBUG", format="{message}")
        try:
            logging.getLogger("scipy.optimize").warning("bracket too wide")
        finally:
            logger.remove(sink)
        assert any("bracket too wide" in str(message) for message in messages)

    def test_warning_summary(self):
        text = "/tmp/probe.py:12: RuntimeWarning: overflow encountered in exp\n  y = np.exp(x)\n"
        assert warning_summary(text) == "RuntimeWarning: overflow encountered in exp (/tmp/probe.py:12)"
        assert warning_summary("plain message") == "plain message"
