"""
Base writer class with common functionality.

Provides shared methods for file output, template rendering and
directory management used by the dataset, run and report writers.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Optional

from jinja2 import Environment, PackageLoader, select_autoescape

from fracture_distill import __version__


class BaseWriter:
    """
    Base class for everything that writes an artifact directory.

    Provides:
    - Jinja2 template rendering
    - Directory creation
    - Text, bytes and JSON output
    - Common context variables
    """

    def __init__(self, output_dir: Path = Path("."), config_hash: Optional[str] = None):
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.created_files: list = []

        self.env = Environment(
            loader=PackageLoader("fracture_distill", "templates"),
            autoescape=select_autoescape(["html", "xml"]),
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )
        self.env.filters["fmt"] = self._format_number

    @staticmethod
    def _format_number(value: Any, digits: int = 4) -> str:
        """Format a metric for tables; NaN and None print as '-'."""
        if value is None:
            return "-"
        try:
            number = float(value)
        except (TypeError, ValueError):
            return str(value)
        if math.isnan(number):
            return "-"
        return f"{number:.{digits}f}"

    def get_base_context(self) -> Dict[str, Any]:
        """Get base context variables for all templates."""
        return {
            "version": __version__,
            "generator": "fracture-distill",
            "config_hash": self.config_hash,
        }

    def create_directory(self, path: Path = Path(".")) -> Path:
        """Create a directory under output_dir if it doesn't exist."""
        full_path = self.output_dir / path
        full_path.mkdir(parents=True, exist_ok=True)
        return full_path

    def write_file(self, path: Path, content: str) -> Path:
        """
        Write text to a file.

        Args:
            path: Relative path from output_dir
            content: File content

        Returns:
            The absolute path written
        """
        full_path = self.output_dir / path
        full_path.parent.mkdir(parents=True, exist_ok=True)

        with open(full_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)

        self.created_files.append(full_path)
        return full_path

    def write_bytes(self, path: Path, content: bytes) -> Path:
        """Write raw bytes to a file."""
        full_path = self.output_dir / path
        full_path.parent.mkdir(parents=True, exist_ok=True)
        full_path.write_bytes(content)
        self.created_files.append(full_path)
        return full_path

    def write_json(self, path: Path, payload: Dict[str, Any]) -> Path:
        """Write JSON with sorted keys; adds config_hash when known."""
        data = dict(payload)
        if self.config_hash is not None:
            data.setdefault("config_hash", self.config_hash)
        return self.write_file(path, json.dumps(data, indent=2, sort_keys=True) + "\n")

    def register_file(self, path: Path) -> Path:
        """Track a file written by a third-party library."""
        full_path = self.output_dir / path
        self.created_files.append(full_path)
        return full_path

    def render_template(
        self,
        template_name: str,
        context: Optional[Dict[str, Any]] = None,
    ) -> str:
        """
        Render a Jinja2 template.

        Args:
            template_name: Template path relative to templates/
            context: Variables to pass to template

        Returns:
            Rendered template string
        """
        template = self.env.get_template(template_name)
        full_context = self.get_base_context()
        if context:
            full_context.update(context)
        return template.render(**full_context)

    def render_and_write(
        self,
        template_name: str,
        output_path: Path,
        context: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """Render template and write to file."""
        content = self.render_template(template_name, context)
        return self.write_file(output_path, content)
