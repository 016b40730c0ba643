"""Main entrypoint for specreg"""
import sys

from specreg.cli import main as cli_main


def specreg():
    """Entrypoint for specreg"""
    sys.exit(cli_main())


if __name__ == "__main__":
    specreg()
