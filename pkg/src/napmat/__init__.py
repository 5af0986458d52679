"""Space-filling-curve token ordering plus pruning and merging for ViT token sequences."""
__version__ = "0.1.0"
