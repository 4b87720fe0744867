"""Cluster-driven curation of histopathology tile datasets.

The pipeline: extract informative 256x256 tiles from whole-slide images,
embed them with a reconstruction-trained convolutional encoder, reduce and
cluster the embeddings, diversity-sample each cluster across centroid-distance
bins, and drive a reviewer-in-the-loop labeling workflow that assembles a
class-balanced tile dataset.
"""

__version__ = "0.1.0"
