#!/usr/bin/env python3
"""
SUMS - Joint clustering of panel-observed multi-state processes
Entry point for running the command line from a source checkout.
"""

import sys
import os

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from sums.cli import main

if __name__ == "__main__":
    main()
