"""Model quads, exact oracles and the joint EM trainer."""

from .quad import DIRECTIONS, X_TO_Y, Y_TO_X, Direction, ModelQuad, get_direction

__all__ = ["DIRECTIONS", "X_TO_Y", "Y_TO_X", "Direction", "ModelQuad", "get_direction"]
