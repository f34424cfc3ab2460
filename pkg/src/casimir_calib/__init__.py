"""Analysis tools for sphere-plane Casimir force experiments with a
resonating cantilever: electrostatic calibration, contact-potential
reconstruction, residual extraction and Lifshitz predictions.
"""

__version__ = "0.1.0"
