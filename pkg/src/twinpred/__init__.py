"""Trajectory prediction at an instrumented intersection.

Subpackages cover every stage: geodetic conversion, detection ingest, lane
maps, preprocessing, classical baselines, the LSTM encoder-decoder, training
losses, metrics, synthetic scenarios and the command line pipeline.
"""

__version__ = "0.1.0"
