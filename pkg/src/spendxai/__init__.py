"""Spending-data personality classifiers with global rule and local counterfactual explanations."""

from ._util import VERSION as __version__

__all__ = ["__version__"]
