"""Cost-aware interactive sequence-to-sequence learning.

A learned regulator (or a bandit / active-learning / fixed baseline)
chooses, per input, which feedback type to request from a teacher — full
correction, error marking, self-supervision, or none — trading quality
improvement against human effort.
"""

__version__ = "0.1.0"
