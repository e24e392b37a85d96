"""Unsupervised audiovisual phonetic category learning.

Audio (MFCC) and mouth-region (eigenmouth) features are clustered with a
Dirichlet-process Gaussian mixture and evaluated on an ABX phoneme
discrimination battery.
"""

__version__ = "0.1.0"

from avphon.errors import AvphonError, ConfigError, DataError, NumericalError

__all__ = ["AvphonError", "ConfigError", "DataError", "NumericalError", "__version__"]
