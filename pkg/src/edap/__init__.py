"""Executable model of encrypted-data processing on an untrusted platform.

Subpackages cover the line codec (``codec``), the owner/platform/processor
key protocol (``protocol``), secure executable packaging and loading
(``executable``), the trusted-footprint machine model (``machine``), and the
trace-driven pipeline timing simulator (``pipeline`` / ``traces`` /
``oracle``).
"""

__version__ = "0.1.0"
