"""Geostatistical analysis of on-farm experiments.

Gridding of yield data, experimental design masks, isotropic and
sum-metric anisotropic exponential covariance models, REML fitting of
spatial linear mixed models, directional variograms and Monte-Carlo
simulation of type I error and treatment-effect bias.
"""

__version__ = "0.1.0"
