from .cli import cli_main, run_cli

__all__ = ["cli_main", "run_cli"]
