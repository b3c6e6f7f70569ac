"""spikebp: discrete-time spiking networks trained with binary-activation
backprop, fixed-point deployment, and an event-driven pipeline simulator."""

from . import backend
from .encoding import (
    DatasetSplit,
    EventRecord,
    ImageSample,
    SpikeFrameSequence,
    bernoulli_encode,
    bin_events_to_frames,
    load_aer_events,
    load_idx,
    reverse_time_augment,
    synth_moving_bar,
)
from .models import PRESETS, SpikingConvNet, SpikingMLP, get_preset
from .nn import Adam, AdamState, adam_step, dropout_apply, squared_hinge_loss
from .quant import (
    QuantizedLayer,
    QuantizedModel,
    quantize_layer,
    quantize_model,
    quantized_forward_ct,
    quantized_forward_dc,
    precision_sweep,
)
from .hwsim import (
    ActivityCounters,
    EnergyCoefficients,
    PipelineSim,
    estimate_energy,
    pipeline_simulate,
    priority_encode_next,
    report_sparsity,
)
from .spiking import (
    NeuronState,
    SteConfig,
    binary_activation,
    hard_sigmoid,
    ste_gradient,
)
from .training import (
    LrSchedule,
    TrainConfig,
    evaluate_ct,
    evaluate_dc,
    fit,
    load_checkpoint,
    lr_exponential_decay,
    save_checkpoint,
    train_epoch_ct,
    train_epoch_dc,
)

__version__ = "0.1.0"

__all__ = [
    "backend",
    "DatasetSplit", "EventRecord", "ImageSample", "SpikeFrameSequence",
    "bernoulli_encode", "bin_events_to_frames", "load_aer_events", "load_idx",
    "reverse_time_augment", "synth_moving_bar",
    "PRESETS", "SpikingConvNet", "SpikingMLP", "get_preset",
    "Adam", "AdamState", "adam_step", "dropout_apply", "squared_hinge_loss",
    "QuantizedLayer", "QuantizedModel", "quantize_layer", "quantize_model",
    "quantized_forward_ct", "quantized_forward_dc", "precision_sweep",
    "ActivityCounters", "EnergyCoefficients", "PipelineSim", "estimate_energy",
    "pipeline_simulate", "priority_encode_next", "report_sparsity",
    "NeuronState", "SteConfig", "binary_activation", "hard_sigmoid",
    "ste_gradient",
    "LrSchedule", "TrainConfig", "evaluate_ct", "evaluate_dc", "fit",
    "load_checkpoint", "lr_exponential_decay", "save_checkpoint",
    "train_epoch_ct", "train_epoch_dc",
]
