"""Expansion planning of power systems under a renewables target.

The package couples a typed power-system model and a two-level scenario
tree with three market-design variants of the stochastic expansion-planning
MILP, an in-repo branch-and-bound engine, and a plan-evaluation harness.
"""

__version__ = "0.1.0"
