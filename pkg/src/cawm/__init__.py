"""Weather-robust visible/infrared image fusion with wavelet state-space blocks,
built on a small numpy autodiff engine."""

from .blocks import (CDSM, CFIM, WAPM, CfimOutput, ChannelAttention, WapmOutput, WeatherEmbedding,
                     WeatherGate, cdsm_forward, cfim_forward, channel_attention, wapm_forward,
                     weather_gate)
from .degradation import (DegradationSpec, apply_compound, apply_haze, apply_rain, apply_snow,
                          synthetic_scene)
from .errors import (CawmError, CheckpointMismatchError, ConfigFileError, ConfigurationError,
                     CorruptCheckpointError, DegenerateInputError, DomainError,
                     UnsupportedFormatError, UsageError)
from .gradcheck import GradcheckResult, check_gradients
from .imageio import load_png, save_png
from .losses import (LossReport, color_loss, gradient_loss, intensity_loss, perceptual_loss, ssim,
                     ssim_loss, total_loss, wavelet_loss)
from .metrics import MetricReport, evaluate, metric_q_abf, metric_q_mi, metric_ssim
from .network import (WSSB, CAWMNet, NetConfig, cawm_forward, load_checkpoint, load_model,
                      save_checkpoint, wssb_forward)
from .optim import Adam, AdamState, adam_step
from .ssm import (ScanKind, ScanOrder, SelectiveSSM, build_scan_order, count_steps, freq_scan,
                  scan_2d_regular, ssm_recurrence, zoh_discretize)
from .tensor import Tensor, no_grad
from .wavelet import WaveletPack, dwt2, idwt2

__version__ = "0.1.0"
