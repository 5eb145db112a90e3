"""Part-based graph convolutional networks for skeleton action recognition."""
