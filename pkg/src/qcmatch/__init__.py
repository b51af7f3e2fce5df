"""Action-reward query-commit matching toolkit.

Solves and rounds the configuration LP for bipartite query-commit matching
with per-vertex patience budgets and per-query action choice, benchmarks
against exact optimal policies at desk scale, and machine-verifies the
worst-case numeric bounds behind the rounding guarantees.
"""

__version__ = "0.1.0"
