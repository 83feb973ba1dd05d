"""Thevenin-equivalent identification of grid-forming inverters from dq admittance scans."""

__version__ = "0.1.0"
