"""Memory-augmented adversarial imitation of driving behaviour on a 2-D lane simulator."""

__version__ = "0.1.0"
