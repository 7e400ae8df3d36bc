"""Parameter rank reduction (PaRa) adapters for dense weights.

PaRa personalizes a frozen weight ``W0`` by removing a learned subspace from
its output space, ``W0 - Q Q^T W0``, where ``Q`` is the orthonormal factor of a
learnable ``B``.
"""
from para.adapter import (
    BOUNDARY_GAMMA,
    ConvShape,
    LoraAdapter,
    ParaAdapter,
    RankPolicy,
    apply_reduced,
    derive_q,
    param_count_lora,
    param_count_para,
    rank_adjust,
    reduce_conv,
    reduce_weight,
)
from para.bundle import AdapterBundle, load_bundle, save_bundle
from para.combine import (
    CombinedWeight,
    CombineMethod,
    combine_lora_form,
    combine_lora_then_para,
    combine_para_then_lora,
    merge_para_qr,
    merge_para_sequential,
)
from para.linalg import QrResult, frobenius_distance, numerical_rank, projector, qr_thin
from para.metrics import DiversityReport, ImageGrid, nullity_gain, pairwise_ssim, ssim, stability_probe
from para.model import Layer, ToyModel
from para.train import TrainConfig, TrainReport, finalize_adapters, soft_projector, train_para

__version__ = "0.1.0"
