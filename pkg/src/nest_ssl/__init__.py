"""Self-supervised speech pretraining with random-projection targets, noisy-speech
augmentation and block masking, built on numpy."""

from .align import AlignConfig, SelectionMask, align_targets, downsample_mask, loss_positions
from .augment import AugmentationPlan, AugmentConfig, Segment, mix, plan_augmentation
from .config import QuantizerConfig, RunConfig, load_config
from .masking import MaskConfig, MaskSpec, apply_mask, sample_mask
from .model import EncoderConfig, encoder_forward, grad_check, init_params, masked_ce_loss
from .quantizer import Quantizer, TokenSequence, init_quantizer, quantize, quantize_frame
from .rng import Xoshiro256
from .signal import MelConfig, MelSpectrogram, Waveform, featurize, load_wav, mel_spectrogram, synthesize
from .trainer import TrainConfig, noam_lr, train_step

__version__ = "0.1.0"
