"""
vcod-bench - Command Line Entry Point

    python app.py <subcommand> [flags]

Subcommands, flags and exit codes live in src/cli.py.
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
