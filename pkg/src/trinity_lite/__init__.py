"""Desk-scale geospatial segmentation platform.

Subpackages and modules:

- ``geo``          Web Mercator math, tiling, WKT parsing
- ``store``        sparse per-tile channel store with a profile catalog
- ``labels``       WKT label sets, rasterization, labeling tasks
- ``dataprep``     dataset assembly (channel stacking, normalization, splits)
- ``kernel``       trainable encoder-decoder models, metrics, AutoML
- ``inference``    deterministic data-parallel tile prediction + rendering
- ``postprocess``  thresholding, weighted DBSCAN, map-matching, filtering
- ``service``      experiment state machine, job orchestration, HTTP API
- ``cli``          operator command line
"""

__version__ = "0.1.0"
