"""Path utilities for the RSTR CDMER project."""

import json
import os
import re
from pathlib import Path
from typing import Any, Dict


def slugify(name: str) -> str:
    """
    Normalize a name to slug format.

    Rules:
    - Convert to lowercase
    - Replace any sequence of non-alphanumeric characters with a single underscore
    - Trim leading/trailing underscores

    Args:
        name: The name to slugify

    Returns:
        The slugified name
    """
    slug = name.lower().replace('-', '_')
    slug = re.sub(r'[^a-z0-9_]+', '_', slug)
    return slug.strip('_')


def get_project_root() -> Path:
    """
    Get the project root directory.

    Returns:
        Path to the project root directory
    """
    return Path(__file__).parent.parent.parent.parent


def _read_project_config() -> Dict[str, Any]:
    config_file = get_project_root() / ".project_config.json"
    if not config_file.exists():
        return {}

    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (json.JSONDecodeError, IOError) as e:
        raise RuntimeError(f"Failed to read project configuration: {e}")


def get_project_dir() -> Path:
    """
    Get the project data directory based on the configured scheme.

    ``RSTR_CDMER_DATA_DIR`` wins when set. Otherwise ``.project_config.json`` decides:
    ``project_local`` (default when the file is absent) keeps data in ``<root>/data``,
    ``data_root`` places it under ``<data_root>/<slug>``.

    Returns:
        Path to the project data directory

    Raises:
        RuntimeError: If the project configuration is invalid
    """
    override = os.environ.get("RSTR_CDMER_DATA_DIR")
    if override:
        data_dir = Path(override).expanduser()
        data_dir.mkdir(parents=True, exist_ok=True)
        return data_dir

    project_root = get_project_root()
    config = _read_project_config()
    data_scheme = config.get('data_scheme', 'project_local')

    if data_scheme == "project_local":
        data_dir = project_root / "data"
    elif data_scheme == "data_root":
        data_root = config.get('data_root')
        if not data_root:
            raise RuntimeError("Missing 'data_root' in project configuration")
        slug = config.get('slug', slugify(project_root.name))
        data_dir = Path(data_root).expanduser() / slug
    else:
        raise RuntimeError(f"Invalid data_scheme: {data_scheme}")

    data_dir.mkdir(parents=True, exist_ok=True)
    return data_dir


def get_config_file_path() -> Path:
    """Get the path to the run configuration file."""
    # Look for config.yaml in project root first
    config_path = get_project_root() / "config.yaml"
    if config_path.exists():
        return config_path

    # Fallback to data directory
    return get_project_dir() / "config.yaml"


def get_log_dir() -> Path:
    """Get the log directory path."""
    log_dir = get_project_dir() / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir
