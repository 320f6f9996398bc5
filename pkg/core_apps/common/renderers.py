import json
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from loguru import logger

from core_apps.common.models import to_plain


class JSONRenderer:
    charset = "utf-8"
    object_label = "summary"

    def __init__(self, object_label: Optional[str] = None) -> None:
        if object_label is not None:
            self.object_label = object_label

    def render(self, data: Any, wrap: bool = False) -> bytes:
        if data is None:
            raise ValueError("Nothing to render")

        payload = to_plain(data)
        if wrap:
            payload = {self.object_label: payload}

        text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
        return (text + "\n").encode(self.charset)

    def write(self, data: Any, target: Union[str, Path], wrap: bool = False) -> Path:
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(self.render(data, wrap=wrap))
        logger.debug(f"Wrote {target}")
        return target


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


class CSVRenderer:
    charset = "utf-8"

    def __init__(self, header: Sequence[str]) -> None:
        if not header:
            raise ValueError("CSV header must not be empty")
        self.header = tuple(header)

    def render(self, rows: Iterable[Sequence[Any]]) -> bytes:
        lines = [",".join(self.header)]
        for row in rows:
            if len(row) != len(self.header):
                raise ValueError(
                    f"Row has {len(row)} cells, header has {len(self.header)}"
                )
            lines.append(",".join(format_cell(cell) for cell in row))
        return ("\n".join(lines) + "\n").encode(self.charset)

    def write(self, rows: Iterable[Sequence[Any]], target: Union[str, Path]) -> Path:
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(self.render(rows))
        logger.debug(f"Wrote {target}")
        return target
