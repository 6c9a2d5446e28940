"""Discriminative-generative document QA: synthetic QA, a retrieval Warmer and a recursive hint loop."""

__version__ = "0.1.0"
