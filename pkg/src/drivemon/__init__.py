"""
drivemon: driver-monitoring sessions, simulated drives and correlation studies.
"""

__version__ = "0.1.0"
