"""Flow-based network anomaly detection toolkit.

Pipeline: packet headers -> per-second flow statistics -> labels and
wildcard aggregates -> normalized context sequences -> LSTM sequence
labeler (one word per second: normal or abnormal), with a data-parallel
trainer, a linear hinge baseline, and a synthetic scenario generator.
"""

__version__ = "0.1.0"
