"""TVSR - Through-plane volumetric super-resolution for thick-slice CT"""

__version__ = "0.1.0"
__author__ = "Your Name"
__description__ = "Swin V2 encoder-decoder for CT slice super-resolution, with its own numpy autodiff engine"
