"""Ultra-low-bitrate audio codec with a frozen semantic token layer and a diffusion decoder."""
from .audio_io import Waveform, read_wav, write_wav
from .bitstream import PacketHeader, bitrate_report, pack, unpack
from .errors import CodecError
from .pipeline import (Codec, CodecConfig, decode_file, encode_file, load_checkpoint,
                       save_checkpoint, train_codec)

__version__ = "0.1.0"

__all__ = [
    "Codec", "CodecConfig", "CodecError", "PacketHeader", "Waveform", "bitrate_report",
    "decode_file", "encode_file", "load_checkpoint", "pack", "read_wav", "save_checkpoint",
    "train_codec", "unpack", "write_wav",
]
