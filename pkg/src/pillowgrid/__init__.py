"""Motion-tracked pillow-grid rehabilitation game framework.

Deterministic game engine for lower-limb therapy exercises on a line of
three pillows or a 3x3 pillow grid, with floor calibration, seeded level
generation, adaptive difficulty, session recording/replay, posture
analytics, anonymous patient profiles, and a live therapist service.
"""

__version__ = "0.1.0"
