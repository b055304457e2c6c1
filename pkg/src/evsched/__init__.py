"""EV charge scheduling: centralized Pareto scheduler and a low-complexity distributed variant."""

__version__ = "0.1.0"
