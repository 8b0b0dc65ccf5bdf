"""lurk: land-use regression + universal kriging exposure modeling."""

__version__ = "0.1.0"
