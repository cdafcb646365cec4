"""Gaussian-splat tabletop reconstruction and novel-view grasp evaluation."""
