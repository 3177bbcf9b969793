"""Output formatting for EER CLI reports."""

import json
from typing import Any, Dict, List, Union

import numpy as np

Report = Union[Dict[str, Any], List[Dict[str, Any]]]


def _plain_value(value: Any) -> Any:
    """Convert numpy scalars and arrays to JSON-native values."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _plain_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain_value(v) for v in value]
    return value


def _cell(value: Any) -> str:
    if value is None:
        return "N/A"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Formatter:
    """Renders command results as json, table or plain text.

    Keys keep their insertion order in every format.
    """

    FORMATS = ("json", "table", "plain")

    @staticmethod
    def format_output(data: Report, format_type: str) -> str:
        """Format data according to the specified format type.

        Args:
            data: A single record (dict) or a list of records
            format_type: One of ``json``, ``table``, ``plain``

        Returns:
            Formatted string output
        """
        data = _plain_value(data)
        if format_type == "json":
            return json.dumps(data, indent=2)
        elif format_type == "table":
            return Formatter._format_table(data)
        elif format_type == "plain":
            return Formatter._format_plain(data)
        else:
            raise ValueError(f"Unknown format type: {format_type}")

    @staticmethod
    def _ordered_keys(items: List[Dict[str, Any]]) -> List[str]:
        keys: List[str] = []
        for item in items:
            keys.extend(k for k in item if k not in keys)
        return keys

    @staticmethod
    def _format_table(data: Report) -> str:
        if isinstance(data, list):
            if not data:
                return "No rows."
            return Formatter._format_list_table(data)
        return Formatter._format_dict_table(data)

    @staticmethod
    def _format_list_table(items: List[Dict[str, Any]]) -> str:
        keys = Formatter._ordered_keys(items)
        widths = {
            key: max(len(key), max(len(_cell(item.get(key))) for item in items)) for key in keys
        }

        header = " | ".join(key.ljust(widths[key]) for key in keys)
        lines = [header, "-" * len(header)]
        for item in items:
            lines.append(" | ".join(_cell(item.get(key)).ljust(widths[key]) for key in keys))
        return "\n".join(lines)

    @staticmethod
    def _format_dict_table(data: Dict[str, Any]) -> str:
        if not data:
            return "No data available."
        width = max(len(str(k)) for k in data)
        lines = []
        for key, value in data.items():
            if isinstance(value, (dict, list)):
                # Nested values are indented JSON under the key column
                value_lines = json.dumps(value, indent=2).split("\n")
                lines.append(f"{str(key).ljust(width)}  {value_lines[0]}")
                lines.extend(" " * (width + 2) + line for line in value_lines[1:])
                continue
            lines.append(f"{str(key).ljust(width)}  {_cell(value)}")
        return "\n".join(lines)

    @staticmethod
    def _format_plain(data: Report) -> str:
        """``key: value`` per line; list items are separated by blank lines."""
        if isinstance(data, list):
            if not data:
                return "No rows."
            return "\n\n".join(Formatter._format_dict_plain(item) for item in data)
        return Formatter._format_dict_plain(data)

    @staticmethod
    def _format_dict_plain(data: Dict[str, Any]) -> str:
        if not data:
            return "No data available."
        lines = []
        for key, value in data.items():
            if isinstance(value, (dict, list)):
                value_lines = json.dumps(value, indent=2).split("\n")
                lines.append(f"{key}: {value_lines[0]}")
                lines.extend(f"  {line}" for line in value_lines[1:])
            else:
                lines.append(f"{key}: {'' if value is None else _cell(value)}")
        return "\n".join(lines)
