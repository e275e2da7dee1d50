"""Monte Carlo verification of exit asymptotics near a Jordan-block critical point."""

__version__ = "0.1.0"
