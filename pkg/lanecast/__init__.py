# lanecast - lane-conditioned multi-path vehicle trajectory prediction
__version__ = "1.0.0"
