"""Adaptive dialogue engine for a simulated care-home delivery robot.

The robot takes "bring me X" errands from a senior, negotiates the details
with a keeper in the kitchen, and permanently learns new intents, slots and
option sets whenever the keeper asks something the current knowledge base
cannot answer.
"""

__version__ = "0.1.0"
