#!/usr/bin/env python3
"""
drivemon entry point
"""

import sys

from drivemon.cli import main

if __name__ == "__main__":
    sys.exit(main())
