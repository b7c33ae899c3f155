"""Link-level operating-mode distributions and traffic emissions from open data.

Pipeline stages: road network construction, traffic derivation, GPS trace
processing (segmentation, map matching, smoothing), operating-mode ground
truth, feature encoding, modular neural network training, the average-speed
drive-cycle baseline, emission conversion, and evaluation.
"""

__version__ = "0.1.0"
