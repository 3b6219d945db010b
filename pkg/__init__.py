"""
sdht-lab: Secure Distributed Hypothesis Testing Lab

An exact-and-sampled toolkit for keyed distributed hypothesis testing schemes:
- Exchangeable-law probability core (TV, Hellinger, histogram enumeration)
- Channel constructions (separating channels, symmetrizers, merges)
- SDHT scheme evaluation, exact and Monte Carlo
- Private simultaneous messages protocols and their verification
- Numerical certification of the keyless impossibility bounds
- Batch CLI writing CSV, JSON and SVG artifacts

Version: 1.0.0
"""

__version__ = "1.0.0"
__author__ = "sdht-lab developers"
