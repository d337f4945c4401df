"""Dynamic channel shuffle: learned per-sample permutation matrices.

Feature-map channels are reordered by permutation matrices generated from the
input itself: a tiny two-branch network emits two small row-stochastic
matrices, each is binarized per row with straight-through gradients, and the
Kronecker product, group sharing, and the fixed ShuffleNet reordering compose
them into the full-width permutation. Orthogonality pressure on the soft
matrices drives the generator toward exact permutations during training.
"""

from .autograd import (Tape, Tensor, backward, binarize_ste, conv1d,
                       conv2d_grouped, cross_entropy_mean, finite_diff_check,
                       global_avg_pool, kron, matmul, relu, row_softmax)
from .errors import (ConfigurationError, DimensionError, FormatError, InputError,
                     NumericError, UsageError)
from .models import (ModelConfig, build_resnet_bottleneck_variant, build_shufflenet,
                     count_flops_params, load_checkpoint, published_shufflenet,
                     save_checkpoint)
from .permutation import (PermutationMatrix, apply_shift, build_manual_shuffle,
                          check_permutation_conditions, clip_and_repair, kron_perm)
from .shuffle import (AuxNetConfig, AuxNetState, ShuffleOutput, aux_forward,
                      compose, derive_aux_config, dynshuffle_forward,
                      init_aux_state, orth_reg, rect_reg, static_dynamic_forward,
                      published_aux_config)
from .training import (TrainConfig, clip_global_norm, evaluate, lambda_warmup,
                       lr_schedule, sgd_step, total_loss, train_epoch)

__version__ = "0.1.0"
