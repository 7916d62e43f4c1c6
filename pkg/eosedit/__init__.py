""" eosedit package imports"""
from rich import pretty

from .config import config

# version
from .version import __version__

# tokenizer
from .components import Vocabulary, TokenSequence
from .components import load_vocabulary, encode, decode, eos_index_of, normalize_text

# text encoder
from .components import EncoderConfig, EncoderWeights, PromptEmbedding, TextEncoder
from .components import load_weights, encode_tokens, eos_state

# edit
from .components import EditSpec, EditedEmbedding
from .components import apply_eos_edit, sweep_guidance, embedding_distance, load_conditioning

# sampling
from .components import NoiseSchedule, GenerationRequest, ImageResult, Provenance
from .components import build_schedule, sample_initial_latent, cfg_combine, ddim_step
from .components import predict_original, generate, latent_digest
from .components import Backend, ToyBackend, Sd14Backend, make_backend

# pipeline
from .pipeline import RunConfig, Pipeline, CompareReport, BaselineReport, SweepReport
from .pipeline import GenerateReport

# constants imported as `eosedit.constants.CONTEXT_LEN`
from . import constants

# logging
from .log import log, set_logging_file

# make all stdout pretty
pretty.install()
