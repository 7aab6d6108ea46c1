from .beam import DecodeResult, beam_decode, greedy_decode, length_penalty
from .model import ModelConfig, Seq2Seq
from .tasks import BOS, EOS, PAD, TASKS, UNK, synth_task
from .train import TrainRun, config_for_task, train

__all__ = [
    "BOS",
    "EOS",
    "PAD",
    "TASKS",
    "UNK",
    "DecodeResult",
    "ModelConfig",
    "Seq2Seq",
    "TrainRun",
    "beam_decode",
    "config_for_task",
    "greedy_decode",
    "length_penalty",
    "synth_task",
    "train",
]
