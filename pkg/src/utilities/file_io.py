"""
Handles all file reading/writing in a consistent and safe way.
Format code (dataio, checkpoint, metrics) builds bytes or text and hands them here;
nothing else touches the disk directly.
"""
from pathlib import Path
from typing import Tuple, Union


def read_file(path: Union[str, Path]) -> Tuple[bool, str]:
    """
    Reads a UTF-8 text file and returns (success, content or error message).
    This avoids exceptions leaking into controllers or CLI.
    """
    try:
        content = Path(path).read_text(encoding="utf-8")
        return True, content
    except (OSError, UnicodeDecodeError) as e:
        return False, f"cannot read {path}: {e}"


def write_file(path: Union[str, Path], data: str) -> Tuple[bool, str]:
    """
    Writes text in UTF-8, creating missing parent directories.
    Returns (success, message).
    """
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(data, encoding="utf-8")
        return True, f"wrote {target}"
    except OSError as e:
        return False, f"cannot write {path}: {e}"


def write_binary(path: Union[str, Path], data: bytes) -> Tuple[bool, str]:
    """
    Writes binary data (frames, images, checkpoints).
    """
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        return True, f"wrote {target}"
    except OSError as e:
        return False, f"cannot write {path}: {e}"


def read_binary(path: Union[str, Path]) -> Tuple[bool, Union[bytes, str]]:
    """
    Reads binary data safely.
    """
    try:
        content = Path(path).read_bytes()
        return True, content
    except OSError as e:
        return False, f"cannot read {path}: {e}"
