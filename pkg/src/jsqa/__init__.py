"""JND-pair contrastive pretraining and MOS prediction for speech quality."""

from ._kernels import BACKEND
from .audio import AudioClip, crop_or_pad, load_audio, resample_to_16k, save_audio, signal_power
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .jnd import PairFeature, SvmModel, extract_pair_feature, si_sdr, svm_predict, train_svm, validate_manifest
from .losses import cosine_similarity, mse_loss, nt_xent_loss
from .metrics import EvalReport, evaluate_model, mae, pcc, rmse, srcc
from .model import (EncoderConfig, JsqaModel, ModelConfig, count_parameters, encoder_forward, half_embedding,
                    init_params, projection_forward, regressor_forward)
from .pairgen import (JndPairRecipe, PairGenConfig, PairManifest, build_manifest, build_pair, mix_at_snr,
                      noise_scale_for_snr, sample_snr_pair, sample_snr_window)
from .training import CurveLog, FinetuneConfig, PretrainConfig, finetune, pretrain, split_dataset

__version__ = "0.1.0"
