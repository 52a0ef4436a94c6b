from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (Conv2D, Deconv2D, Dense, Dropout, Flatten, MaxPool2D,
                     ReLU, UpsampleNearest)
from .model import (FcaeClassifier, FcaeModel, LossParts, encoder_shape_chain,
                    forward_backward)
from .ops import (conv2d_same, deconv, maxpool, recon_loss_and_grad, softmax,
                  softmax_cross_entropy, upsample_nearest, xavier_init)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "Conv2D", "Deconv2D", "Dense", "Dropout", "FcaeClassifier",
    "FcaeModel", "Flatten", "LossParts", "MaxPool2D", "ReLU", "UpsampleNearest",
    "adam_step", "conv2d_same", "deconv", "encoder_shape_chain",
    "forward_backward", "load_checkpoint", "maxpool", "recon_loss_and_grad",
    "save_checkpoint", "softmax", "softmax_cross_entropy", "upsample_nearest",
    "xavier_init",
]
