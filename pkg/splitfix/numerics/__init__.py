"""
    Minimal differentiable numerics in splitfix app: parameters, layers,
    losses, the optimizer, checkpoints & gradient checks.
"""
