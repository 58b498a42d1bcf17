"""Utility functions for RSTR CDMER."""

from .paths import (
    get_config_file_path,
    get_log_dir,
    get_project_dir,
    get_project_root,
    slugify,
)

__all__ = [
    "get_project_dir",
    "get_project_root",
    "slugify",
    "get_config_file_path",
    "get_log_dir",
]
