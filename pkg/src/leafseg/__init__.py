"""Leaf-image segmentation and filtering with small tanh networks."""

from .image_core import (NormalizedPlane, PnmError, RasterImage, decode_image, encode_image,
                         normalize, quantize_output, read_image, reconstruct, to_grayscale,
                         write_image)

__version__ = "0.1.0"

__all__ = ["NormalizedPlane", "PnmError", "RasterImage", "decode_image", "encode_image",
           "normalize", "quantize_output", "read_image", "reconstruct", "to_grayscale",
           "write_image"]
