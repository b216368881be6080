"""seqref: engine, service and analytics for the sequential collaborative
reference game.

Two agents each see a circular window onto a shared 2-D plane of grayscale
dots. Dots drift along quadratic Bezier arcs each turn; at the end of every
turn both agents must pick the same dot, their views then shift, and play
continues for up to five turns. The score of a game is the number of leading
turns with matching picks.
"""

__version__ = "0.1.0"
