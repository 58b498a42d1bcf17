"""Atomic file writes for feature files, model artifacts and reports."""

import json
import tempfile
from pathlib import Path
from typing import Any, Dict, Union


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """
    Atomically replace ``path`` with ``text`` using a temporary file.

    Args:
        path: Destination file
        text: Full file contents

    Returns:
        The destination path

    Raises:
        IOError: If writing fails
    """
    target = Path(path)
    # Ensure parent directory exists
    target.parent.mkdir(parents=True, exist_ok=True)

    temp_path = None
    try:
        with tempfile.NamedTemporaryFile(
            mode='w',
            encoding='utf-8',
            dir=target.parent,
            delete=False,
            suffix='.tmp',
            newline='\n',
        ) as temp_file:
            temp_path = Path(temp_file.name)
            temp_file.write(text)
            temp_file.flush()

        # Atomic move to final location
        temp_path.replace(target)
        return target

    except Exception as e:
        # Clean up temporary file if it exists
        if temp_path is not None and temp_path.exists():
            temp_path.unlink(missing_ok=True)
        raise IOError(f"Failed to write {target}: {e}")


class JsonDocumentWriter:
    """Reads and atomically writes one JSON document."""

    def __init__(self, file_path: Union[str, Path]) -> None:
        self.file_path = Path(file_path)

    def write(self, document: Dict[str, Any]) -> Path:
        """
        Serialize ``document`` (sorted keys, 2-space indent) and replace the file.

        Raises:
            ValueError: If the document is not JSON serializable
            IOError: If writing fails
        """
        try:
            text = json.dumps(document, indent=2, sort_keys=True, allow_nan=False)
        except (TypeError, ValueError) as e:
            raise ValueError(f"Document is not JSON serializable: {e}")
        return atomic_write_text(self.file_path, text + "\n")

    def read(self) -> Dict[str, Any]:
        """
        Load the document.

        Raises:
            FileNotFoundError: If the file does not exist
            ValueError: If the file is not a JSON object
        """
        if not self.file_path.exists():
            raise FileNotFoundError(f"No such file: {self.file_path}")
        try:
            with open(self.file_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{self.file_path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ValueError(f"{self.file_path} does not contain a JSON object")
        return data
