"""
    Connectivity scoring, agglomeration & tracing experiments.
"""
