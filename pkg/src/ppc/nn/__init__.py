"""Numpy neural network stack with hand-written backward passes."""
