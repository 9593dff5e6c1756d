#!/usr/bin/env python3
"""
SUMS - Entry point for running the command line as a module.
"""

from sums.cli import main

if __name__ == "__main__":
    main()
