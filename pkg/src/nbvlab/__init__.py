"""Next-best-view planning lab: procedural plant scenes, simulated depth
captures, voxel ray-casting and a self-supervised online IG predictor."""

__version__ = "0.1.0"
