import dwlab.config as config
import dwlab.errors as errors
import dwlab.logging as logging


__version__ = "0.1"
