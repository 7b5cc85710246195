"""Core GVKF math: primitives, opacity fields, surfaces, meshing and fitting.

Submodules are imported directly (``from gvkf.core.renderer import Renderer``);
the models package imports the exception hierarchy from here.
"""
