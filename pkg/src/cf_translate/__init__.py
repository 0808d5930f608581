"""Counterfactual translation of multi-channel images between outcome groups.

Learns a residual image-to-image mapping between two groups with an
adversarial critic, then quantifies which channels the mapping changes and
whether those changes are statistically detectable.
"""

__version__ = "0.1.0"
