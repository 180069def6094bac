"""Multiview depth motion capture on synthetic capsule bodies.

The pipeline has four stages: render labeled synthetic depth from calibrated
virtual cameras (mvdp.render / mvdp.dataset), densely classify body parts per
pixel (mvdp.classifier), fuse views into a labeled point cloud and extract
per-class statistics (mvdp.aggregate), and regress joint positions in closed
form (mvdp.regress). mvdp.evaluate implements the metrics; mvdp.cli ties the
stages together.
"""

__version__ = "0.1.0"
