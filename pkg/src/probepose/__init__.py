"""Sim-in-the-loop probe pose estimation over a textured planar workspace."""
