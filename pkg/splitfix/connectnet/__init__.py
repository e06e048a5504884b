"""
    Connectivity classification of candidate segment pairs.
"""
