# Importing the package loads and validates defaults.yaml.
from .data import DEFAULTS  # noqa: F401
