"""CPU-only CNN micro-framework and CLI for white blood cell classification."""

from . import data, image_io, layers, metrics, model, optim, synth, tensor
from .data import Batch, Dataset, LabeledImage, augment_rotations, batches, \
    load_dataset, split_dataset
from .errors import (ArchitectureError, DecodeError, DistributionError, FormatError,
                     GeometryError, InsufficientDataError, LabelError, NumericError,
                     ShapeError)
from .metrics import ConfusionMatrix, EvalReport, confusion, render_report, report
from .model import (Checkpoint, EpochRecord, NetConfig, WbcNet, build,
                    load_checkpoint, model_from_checkpoint, predict,
                    save_checkpoint, train)
from .optim import AdamState, LossValue, cross_entropy, gradient_check

__version__ = "0.1.0"
