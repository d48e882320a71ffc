"""
Entry point for the plane UQ toolkit CLI.
This allows running the module with: python -m plane_uq
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
