"""
Numerical models: discretization, equation, Nehari and nodal solvers, verification suites.
"""
