#!/usr/bin/env python3
"""
SHQP Feasibility - Script Entry Point

Runs the package CLI without installing it.

Usage:
    python feasibility.py solve --problem problems/cone_pair.json --policy last:1
    python feasibility.py bench --problem problems/zigzag.json --policy current --policy last:1
    python feasibility.py diagnose --trace trace.csv
"""

import sys

from shqp.cli import main

if __name__ == '__main__':
    sys.exit(main())
