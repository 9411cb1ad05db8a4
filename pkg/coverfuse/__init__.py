"""
coverfuse
Cover song identification by fusing MFCC, MFCC self-similarity and HPCP block
features with similarity network fusion, scored by Smith-Waterman alignment.
"""

__version__ = "1.0.0"
