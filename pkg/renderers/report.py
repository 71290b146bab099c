#!/usr/bin/env python3

# renderers/report.py
import logging
import os
from typing import Any, Dict

from jinja2 import Environment, FileSystemLoader
from jinja2.exceptions import TemplateError

from renderers.density_image import ExportError

logger = logging.getLogger(__name__)


def render_report(context: Dict[str, Any]) -> str:
    """
    Render report.txt for a finished run.

    Args:
        context: Template variables: report (RunReport) and problem (ProblemSpec)

    Raises:
        ExportError: If the template cannot be loaded or rendered
    """
    template_dir = os.path.dirname(os.path.abspath(__file__))
    env = Environment(
        loader=FileSystemLoader(template_dir),
        trim_blocks=True,
        lstrip_blocks=True
    )
    try:
        template = env.get_template("report.txt.j2")
        return template.render(**context)
    except TemplateError as e:
        raise ExportError(f"Error rendering run report: {e}")


def write_report(context: Dict[str, Any], path: str) -> str:
    text = render_report(context)
    try:
        with open(path, "w") as f:
            f.write(text)
    except OSError as e:
        raise ExportError(f"Cannot write report {path}: {e}")
    return path
