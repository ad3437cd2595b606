"""Utility functions for the Design Loop Bench harness."""

import hashlib
import math
import re
from pathlib import Path
from typing import Any


def slugify(text: str) -> str:
    """Convert text to a filesystem-friendly slug."""
    text = text.lower()
    text = re.sub(r"[^\w\s-]", "", text)
    text = re.sub(r"[-\s]+", "-", text)
    return text.strip("-")


def load_file(path: Path) -> str:
    """Load content from a file."""
    if path.exists():
        return path.read_text(encoding="utf-8")
    return ""


def save_file(path: Path, content: str) -> None:
    """Save content to a file, creating directories if needed."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def stable_seed(*parts: Any) -> int:
    """Derive a 63-bit seed from a tuple of identifiers.

    The value depends only on the string forms of the parts, so it is stable
    across processes and Python versions (unlike hash()).
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def format_float(value: float | None) -> str:
    """Format a float with 6 significant digits ("" for None / NaN)."""
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    return f"{value:.6g}"


def render_template(template: str, fields: dict[str, Any]) -> str:
    """Fill `{{ name }}` placeholders; unknown placeholders are left as-is."""

    def replace(match: re.Match) -> str:
        key = match.group(1)
        return str(fields[key]) if key in fields else match.group(0)

    return re.sub(r"\{\{\s*(\w+)\s*\}\}", replace, template)


def parse_agent_markdown(content: str) -> dict[str, str]:
    """Parse an agent persona markdown file into its components.

    Args:
        content: Raw markdown content

    Returns:
        Dictionary with keys: name, role, system_prompt, history_prompt,
        clarification
    """
    result = {
        "name": "",
        "role": "",
        "system_prompt": "",
        "history_prompt": "",
        "clarification": "",
    }

    # Extract name from first heading
    name_match = re.search(r"^#\s+Agent:\s*(.+)$", content, re.MULTILINE)
    if name_match:
        result["name"] = name_match.group(1).strip()

    # Extract sections
    sections = {
        "role": r"##\s+Role\s*\n(.*?)(?=\n##|\Z)",
        "system_prompt": r"##\s+System Prompt\s*\n(.*?)(?=\n##|\Z)",
        "history_prompt": r"##\s+History Prompt\s*\n(.*?)(?=\n##|\Z)",
        "clarification": r"##\s+Clarification\s*\n(.*?)(?=\n##|\Z)",
    }

    for key, pattern in sections.items():
        match = re.search(pattern, content, re.DOTALL | re.IGNORECASE)
        if match:
            result[key] = match.group(1).strip()

    return result
