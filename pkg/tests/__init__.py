"""
SHQP Feasibility Test Suite

Projection oracles, the dual active-set QP, halfspace policies, solvers,
diagnostics and the command line.
"""
