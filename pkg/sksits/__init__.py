"""
scikit-sits
Panoptic segmentation of satellite image time series for the Python ecosystem
"""
import logging

# joblib workers do not inherit logging handlers,
# only the parent process reports progress
logging.getLogger(__name__).addHandler(logging.NullHandler())

__author__ = """scikit-sits team"""
__version__ = "0.1.0"  # pylint: disable= undefined-variable, pointless-statement
