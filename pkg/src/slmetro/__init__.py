"""Structured-light metrology benchmark: reconstruction geometry, a Gray-code
plus stripe-shift codec, geometric fitting, the length / flatness / height /
sphericity criteria, and a ray-cast simulator with known ground truth."""

__version__ = "0.1.0"
