#!/usr/bin/env python3
"""Run the print job ledger CLI from a source checkout"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from print_job_ledger.cli import main

if __name__ == "__main__":
    main()
