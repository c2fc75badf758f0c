"""Physics-informed simulation toolkit: FEM, POD reduced models and PINNs on 3D assets."""

__version__ = "0.1.0"
