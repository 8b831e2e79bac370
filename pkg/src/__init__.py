"""
NegMix Toolkit
Sequential noise extraction, degradation chains and NegMix augmentation
for real-world video super-resolution experiments
"""

__version__ = "1.0.0"
