"""Random walks on spaces with contracting isometries: geometry, pivotal times and limit laws."""

__version__ = "0.1.0"
