"""
@defgroup Python Python
@brief Factor-graph joint planning and control for multi-robot payload transport

@pre Requires numpy and scipy.
"""

__author__ = 'fg-transport developers'
__license__ = 'LGPL-3.0-or-later'
# SPDX-License-Identifier: LGPL-3.0-or-later
__version__ = '0.3.0'
