"""Particle Gibbs and related samplers with conjugate parameters integrated out."""

__version__ = "0.1.0"
