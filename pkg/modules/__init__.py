"""
BayeSMG library: samplers, the SMG model, solvers, Gibbs engines, diagnostics and I/O.
"""
