"""sketch3d: single free-hand sketch to 3D mesh via differentiable silhouettes."""

__version__ = "0.1.0"
