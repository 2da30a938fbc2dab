from .vi_dgp import optimize, posterior_sample

__all__ = ["optimize", "posterior_sample"]
