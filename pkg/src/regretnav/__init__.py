"""Regretful navigation agent: a learned progress heuristic with learned
backtracking and progress markers, trained on procedural navigation graphs."""

__version__ = "0.1.0"
