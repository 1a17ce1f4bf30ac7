"""stablegrad

Layer-wise gradient rescaling (StableGrad) for physics-informed neural
network training, with residual assembly, optimizers and kernel diagnostics.
"""

__version__ = "1.0.0"
