"""QP-adaptive deformable-convolution GAN for compressed-video luminance enhancement."""

from .deform import (DeformableAlign, OffsetUNet, align, bilinear_sample, deformable_conv, offset_channels,
                     predict_offsets)
from .discriminator import PatchDiscriminator, PatchScoreMap, discriminate, extract_features
from .evaluation import PerceptualMetric, enhance_video, perceptual_distance, psnr
from .flow import FlowAlign, FlowField, estimate_flow, flow_align, warp
from .frames import (FrameTriplet, LumaFrame, TrainingSample, degrade, extract_luma, make_triplets, qstep,
                     sample_patches)
from .generator import Generator, GeneratorConfig, ModulatedResBlock, enhance, generate, qp_scales
from .losses import (FeatureExtractor, LossReport, VGGLossConfig, fm_loss, gan_loss_d, gan_loss_g,
                     total_g_loss, vgg_loss)
from .qp import QP_SET, QPCode, encode_qp
from .training import Trainer, TrainingConfig, load_generator, train

__version__ = "0.1.0"
