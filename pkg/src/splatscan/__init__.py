"""Active RGB-D reconstruction with an optimizable Gaussian-splat map.

Subpackages cover the full loop: synthetic scene simulation, differentiable
splat rendering with analytic gradients, map optimization, occupancy mapping,
next-best-view planning with rendering-based information gain, RRT path
planning, keyframe management, post-refinement, and evaluation metrics.
"""

__version__ = "0.1.0"
