"""
    Split-error correction toolkit for over-segmented neuron reconstructions.
"""
