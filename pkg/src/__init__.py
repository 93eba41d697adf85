"""
OPAD Active Learning - Source Code Package

This package contains the synthetic task generators and the ``opad``
subpackage: pools, prediction models, the acquisition policy, annotator
simulation, rewards, loops and the experiment harness.
"""

__version__ = "1.0.0"
__author__ = "OPAD Active Learning Team"
