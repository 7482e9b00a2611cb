"""Peak age of information for in-body nanosensor networks.

Circuit hemodynamics feed a Markov mobility model of the circulation; channel
models supply packet losses; closed forms are checked against a walk oracle.
"""

__version__ = "0.1.0"
