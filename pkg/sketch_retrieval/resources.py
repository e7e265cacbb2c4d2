from pathlib import Path


def read_text_file(path: Path, hint: str = "") -> str:
    """
    Load a configuration, manifest or trace file.
    Raises RuntimeError with context if the file is missing.
    """

    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        suffix = f" {hint}" if hint else ""
        raise RuntimeError(f"File '{path}' is missing.{suffix}") from exc
