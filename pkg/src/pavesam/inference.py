"""Box-to-mask inference plumbing shared by evaluation, service, and convert.

Pipeline per image: resize/pad to the model input, normalize, encode once;
then per box: clamp in original coordinates, forward-map, encode the
prompt, decode, and map the probability mask back to original coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import dataio
from .core import BoundingBox, clamp_box
from .model import BackboneBundle, ImageEmbedding


@dataclass(frozen=True)
class EmbeddedImage:
    embedding: ImageEmbedding
    transform: dataio.ResizeTransform
    height: int
    width: int


def embed_image(bundle: BackboneBundle, image: np.ndarray) -> EmbeddedImage:
    resized, transform = dataio.resize_and_pad(image, target=bundle.config.input_size)
    embedding = bundle.encode_image(bundle.preprocess(resized))
    return EmbeddedImage(embedding, transform, image.shape[0], image.shape[1])


def predict_box(
    bundle: BackboneBundle, embedded: EmbeddedImage, box: BoundingBox
) -> tuple[np.ndarray, float]:
    """Probability mask in original coordinates plus the model's IoU score."""
    clamped = clamp_box(box, embedded.height, embedded.width)
    model_box = dataio.map_box(clamped, embedded.transform, "forward")
    prompt = bundle.encode_box(model_box)
    with torch.no_grad():
        prediction = bundle.decode(embedded.embedding, prompt)
    prob = dataio.mask_to_original_space(prediction.probability_mask(), embedded.transform)
    return prob, float(prediction.iou_scores[0])
