from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd
from openpyxl import load_workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.16e"

# Workbook styling
HEADER_FILL = PatternFill(start_color="1F4E78", end_color="1F4E78", fill_type="solid")
HEADER_FONT = Font(bold=True, color="FFFFFF")
FAILED_FILL = PatternFill(start_color="F8CBAD", end_color="F8CBAD", fill_type="solid")
_HAIR = Side(style="hair", color="808080")
GRID_BORDER = Border(left=_HAIR, right=_HAIR, top=_HAIR, bottom=_HAIR)
HEADER_ALIGN = Alignment(horizontal="center", vertical="center", wrap_text=True)
NUMBER_ALIGN = Alignment(horizontal="right")
TEXT_ALIGN = Alignment(horizontal="left")
# keyed by numpy dtype kind; bools and strings stay General
NUMBER_FORMATS = {"i": "0", "u": "0", "f": "0.000000E+00"}


def to_plain(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays become Python values, NaN becomes None."""
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.generic):
        return to_plain(value.item())
    if isinstance(value, complex):
        return [to_plain(value.real), to_plain(value.imag)]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dumps(value: Any, indent: int | None = None) -> str:
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(to_plain(value), sort_keys=True, indent=indent, separators=separators)


def header_lines(header: Mapping[str, Any]) -> list[str]:
    """One '# key: json' comment line per entry, keys in insertion order."""
    return [f"# {key}: {dumps(value)}" for key, value in header.items()]


def write_csv(frame: pd.DataFrame, path: str | Path, header: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header_lines(header):
            f.write(line + "\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def write_json(payload: Mapping[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(dumps(payload, indent=2) + "\n")
    logger.info("wrote %s", path)
    return path


def _style_table(ws, frame: pd.DataFrame) -> None:
    """Header styling and number formats by dtype; rows of failed checks are shaded."""
    failed = set()
    if "passed" in frame.columns:
        failed = {int(i) + 2 for i in np.flatnonzero(~frame["passed"].astype(bool).to_numpy())}

    for j, (name, dtype) in enumerate(frame.dtypes.items(), start=1):
        head = ws.cell(row=1, column=j)
        head.font, head.fill, head.border, head.alignment = HEADER_FONT, HEADER_FILL, GRID_BORDER, HEADER_ALIGN

        number_format = NUMBER_FORMATS.get(dtype.kind)
        align = NUMBER_ALIGN if number_format else TEXT_ALIGN
        for i in range(2, len(frame) + 2):
            cell = ws.cell(row=i, column=j)
            cell.border = GRID_BORDER
            cell.alignment = align
            if number_format:
                cell.number_format = number_format
            if i in failed:
                cell.fill = FAILED_FILL

        if dtype.kind == "f":
            width = 14
        else:
            width = max((len(str(v)) for v in frame[name]), default=0) + 2
        ws.column_dimensions[get_column_letter(j)].width = min(max(12, len(str(name)) + 2, width), 40)

    ws.freeze_panes = "A2"


def write_xlsx(tables: Mapping[str, pd.DataFrame], path: str | Path) -> Path:
    """All tables of one run in a formatted workbook, one sheet per table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sheets = {name[:31]: frame for name, frame in tables.items()}
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for sheet, frame in sheets.items():
            frame.to_excel(writer, sheet_name=sheet, index=False)

    wb = load_workbook(path)
    for sheet, frame in sheets.items():
        _style_table(wb[sheet], frame)
    wb.save(path)
    logger.info("wrote %s (%d sheets)", path, len(tables))
    return path
