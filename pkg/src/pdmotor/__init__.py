"""Motor-symptom class and severity estimation from wrist IMU data with layered Gaussian processes."""
__version__ = "0.1.0"
