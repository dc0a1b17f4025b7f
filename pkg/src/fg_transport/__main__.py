"""
Entry point for `python -m fg_transport`
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later

import sys

from fg_transport.cli import main

sys.exit(main())
