"""jailvote - jail roster to voter file linkage and turnout study harness."""

__version__ = "0.1.0"
