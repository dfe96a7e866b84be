"""Low-footprint streaming speech-to-intent engine.

Raw 16 kHz PCM audio becomes 41-dim filterbank frames, a purely
convolutional network turns any window of at least 61 frames into a pooled
summary vector, and overlapping windows of a live stream are folded with an
elementwise max so the intent posterior is ready almost as soon as the
audio ends.
"""

from .data import (Manifest, ToyCorpusSpec, WavFormatError, class_motif,
                   generate_toy_corpus, load_fluent_manifest, load_intent_csv,
                   load_manifest, mix_noise, read_wav, synth_motif_utterance,
                   toy_label, write_wav)
from .estimators import CmvnTransformer, FilterbankTransformer, IntentClassifier
from .features import (AudioBuffer, CmvnStats, apply_cmvn, compute_global_cmvn,
                       extract_features, frame_count, load_cmvn_stats,
                       mel_filter_centers, mel_filterbank, save_cmvn_stats)
from .model import (ConvStackResult, LayerSpec, ModelWeights,
                    RECEPTIVE_FIELD_FRAMES, TIME_STRIDE_FRAMES,
                    UtteranceTooShortError, build_custom_model, build_model,
                    conv_stack_forward, head_forward, head_logits,
                    output_length)
from .serialization import (ChecksumError, ShapeMismatchError,
                            UnknownVersionError, WeightFileError,
                            WeightFormatError, load_weights, save_weights)
from .streaming import (LatencyReport, MaxAccumulator, StreamConfig,
                        StreamingSession, full_classify, measure_latency,
                        segment_stream, stream_classify)
from .training import (Adam, Batch, TrainConfig, TrainResult, evaluate,
                       loss_and_grad, make_batches, pad_batch, predict_logits,
                       train)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "CmvnStats", "CmvnTransformer", "ConvStackResult",
    "ChecksumError", "FilterbankTransformer", "IntentClassifier",
    "LatencyReport", "LayerSpec", "Manifest", "MaxAccumulator",
    "ModelWeights", "RECEPTIVE_FIELD_FRAMES", "ShapeMismatchError",
    "StreamConfig", "StreamingSession", "TIME_STRIDE_FRAMES", "ToyCorpusSpec",
    "TrainConfig", "TrainResult", "UnknownVersionError",
    "UtteranceTooShortError", "WavFormatError", "WeightFileError",
    "WeightFormatError", "Adam", "Batch", "apply_cmvn", "build_custom_model",
    "build_model", "class_motif", "compute_global_cmvn", "conv_stack_forward",
    "evaluate",
    "extract_features", "frame_count", "full_classify", "generate_toy_corpus",
    "head_forward", "head_logits", "load_cmvn_stats", "load_fluent_manifest", "load_intent_csv",
    "load_manifest", "load_weights", "loss_and_grad", "make_batches",
    "measure_latency", "mel_filter_centers", "mel_filterbank", "mix_noise",
    "output_length", "pad_batch", "predict_logits", "read_wav",
    "save_cmvn_stats", "save_weights", "segment_stream", "stream_classify",
    "synth_motif_utterance", "toy_label", "train", "write_wav",
]
