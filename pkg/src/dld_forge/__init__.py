"""Design toolkit for deterministic lateral displacement (DLD) arrays.

Solve the flow in one unit cell, trace finite-size particles through it,
extract the critical diameter, train neural surrogates on the results and
search the design space with NSGA-III.
"""

__version__ = "0.1.0"
