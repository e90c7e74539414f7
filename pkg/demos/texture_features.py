"""
Texture descriptors of a synthetic tissue crop
==============================================

A colour crop is cut into sliding-window patches, background patches are
dropped, and each remaining patch is described by GLCM/Haralick texture at
four orientations. A grey slice gets the 48 radiomics descriptors.
"""

import numpy as np

from mmfusion.extract import FeatureParams, pathology_samples
from mmfusion.features import LbpParams, compute_glcm, GlcmParams, haralick, lbp_histogram, radiomics_features
from mmfusion.preprocess import GrayImage

rng = np.random.default_rng(0)

# a 220x220 crop: stained tissue on the left, bright glass on the right
crop = np.full((220, 220, 3), 245, np.uint8)
crop[:, :130] = rng.integers(60, 200, (220, 130, 3))
crop[:, :130, 0] = 190

# window 100 / stride 60 gives nine patches; the glass-heavy ones are dropped
vectors = pathology_samples(crop, FeatureParams())
print(f"{len(vectors)} tissue patches kept, {len(vectors[0])} features each")
print(dict(list(vectors[0].as_dict().items())[:6]))

# one co-occurrence matrix by hand: 4 grey levels, horizontal neighbours
img = GrayImage(np.array([[0, 0, 1, 1], [0, 0, 1, 1], [0, 2, 2, 2], [2, 2, 3, 3]]), 2)
g = compute_glcm(img, GlcmParams(delta=1, theta=0, levels=4))
print(g.counts)
print(haralick(g).as_dict())

# LBP histogram of a smooth ramp: almost every pixel is a uniform pattern
ramp = GrayImage(np.add.outer(np.arange(12), np.arange(12)), 8)
print(lbp_histogram(ramp, LbpParams(8, 1)).bins)

# radiomics: grey histogram statistics, GLCM texture, LBP statistics
ct = GrayImage(rng.integers(0, 256, (32, 32)), 8)
fv = radiomics_features(ct)
print(len(fv), fv.names[:3], fv.names[-3:])
