"""btweb: a desk-scale node for BitTorrent-powered websites, plus the
forensic and monitoring tooling for its on-disk and on-wire artifacts."""

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
