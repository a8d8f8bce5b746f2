"""Allow ``python -m jointauc`` as an alias for the console script."""
from .cli import entry

entry()
