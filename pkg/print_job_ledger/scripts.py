#!/usr/bin/env python3
"""
Entry point scripts for print job ledger console commands
"""

import sys


def print_ledger_main():
    """Entry point for print-ledger command"""
    from .cli import main
    main()


def print_ledger_repro_main():
    """Entry point for print-ledger-repro: writes both reproduction reports"""
    from .cli import main
    code = 0
    for name in ("mainnet", "ropsten"):
        try:
            main(sys.argv[1:] + ["report", "--repro", name])
        except SystemExit as e:
            code = code or e.code or 0
    sys.exit(code)


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == 'repro':
        sys.argv.pop(1)
        print_ledger_repro_main()
    else:
        print_ledger_main()
