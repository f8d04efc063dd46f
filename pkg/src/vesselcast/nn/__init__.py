from .layers import (AvgPool1d, CausalConv1d, Dense, EncoderBlock, LayerConfigError, LayerNorm,
                     MultiHeadAttention, ShapeError, TransposedConv1d, avg_pool1d, causal_conv1d, dense,
                     layer_norm, multi_head_attention, transposed_conv1d, transposed_length)
from .train import (AdamState, FitResult, NonFiniteGradientError, StateError, TrainConfig, TrainingDiverged,
                    adam_step, backward, fit)
