"""
    Dense volumetric embedding network & its connectivity-aware training.
"""
