"""Defines the front end version of eosedit"""

__version__ = "0.3.0"
