from wsa_separation.attention import (FlopsReport, WsaConfig, attention_flops, build_kernel,
                                      windowed_sink_attention)
from wsa_separation.checkpoint import load_checkpoint, save_checkpoint
from wsa_separation.dsp import AudioBuffer, StftConfig, read_wav, write_wav
from wsa_separation.model import ModelConfig, SepModel, convert_to_wsa, init_toy_model, separate
