"""Instance segmentation by regressing a real-valued label map, desk scale.

The label net is trained with a permutation-invariant pair loss, a binary
foreground term, a Mumford-Shah style smoothness term and a quantization
term; mean shift turns its output into candidate segments that a small
verification head classifies and scores.
"""

__version__ = "0.1.0"
