from . import autodiff as ad
from .autodiff import NonFiniteError, ShapeError, Tape, forward_backward
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_grad, relative_error
from .optim import AdamState, OptState, adam_step, clip_params, rmsprop_step
from .params import ParamStore
from .rng import derive_seed, stream

__all__ = [
    "ad", "NonFiniteError", "ShapeError", "Tape", "forward_backward",
    "load_checkpoint", "save_checkpoint", "finite_diff_grad", "relative_error",
    "AdamState", "OptState", "adam_step", "clip_params", "rmsprop_step",
    "ParamStore", "derive_seed", "stream",
]
