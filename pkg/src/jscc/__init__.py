"""Desk-scale joint source-channel coding laboratory: differentiable array
engine, fading-channel simulation, rate-reduction objectives, channel-adaptive
gating, and the separate-coding baseline."""

from .autodiff import (Tensor, constant, conv2d, conv2d_transpose,
                       get_default_dtype, logdet_psd, set_default_dtype)
from .channel import (ChannelRealization, draw_channel, equalize,
                      normalize_power, pack, transmit, unpack)
from .data import (CorruptionConfig, ImageBatch, MembershipMatrix,
                   build_membership, corrupt_labels, make_synthetic_subspace,
                   parse_cifar10, parse_idx)
from .losses import (RateParams, SsimConstants, class_rate, coding_rate,
                     cross_entropy, mse_loss, rate_reduction, ssim, ssim_loss,
                     unified_loss)
from .metrics import (SsccConfig, ToyTransformCodec, activated_ratio, capacity,
                      max_rate, psnr, sscc_classify, sscc_transmit)
from .models import (DecoderConfig, EncoderConfig, GateConfig, GateNet,
                     GateState, gate_forward, gated_encode, normalize_features,
                     relaxed_mask)
from .subspace import SubspaceModel, accuracy, classify, fit_subspaces
from .training import (Adam, ChannelConfig, TrainConfig, discretize_sigma,
                       evaluate, fit_feature_classifier,
                       train_cross_entropy_baseline, train_gated, train_jscc)

__version__ = "0.1.0"
