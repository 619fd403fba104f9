"""floqlab: pulse-level simulation, calibration and benchmarking of
Floquet-engineered qubit interactions on fixed-frequency transmons."""

__version__ = "0.1.0"
