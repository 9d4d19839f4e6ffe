"""Subtask discovery from demonstrations.

Selection-structure CI tests, regularized convolutional NMF for learning
temporally extended patterns and binary subgoal indicators, and pattern
playback in a small driving environment.
"""

__version__ = "0.1.0"
