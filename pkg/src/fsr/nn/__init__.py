"""From-scratch CNN engine: layers, topologies, serialization, gradient checks."""

from .gradcheck import (
    gradient_check,
    jitter,
    layer_gradient_check,
    randomize_for_check,
    relative_error,
)
from .layers import (
    conv_backward,
    conv_forward,
    crop_backward,
    crop_forward,
    dropout_backward,
    dropout_forward,
    fc_backward,
    fc_forward,
    lrn_backward,
    lrn_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
)
from .network import (
    PRESETS,
    LayerSpec,
    Network,
    NetworkSpec,
    caffenet,
    conv,
    crop,
    dropout,
    dump_spec,
    extract_features,
    fc,
    infer_shapes,
    init_weights,
    lrn,
    maxpool,
    network_backward,
    network_forward,
    parameter_shapes,
    parse_spec,
    relu,
    replace_final_layer,
    tiny,
)
from .serialize import load_model, save_model

__all__ = [name for name in dir() if not name.startswith("_")]
