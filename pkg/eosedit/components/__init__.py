""" Imports all eosedit components """

# tokenizer
from .tokenizer import Vocabulary, TokenSequence
from .tokenizer import load_vocabulary, encode, decode, eos_index_of, normalize_text

# text encoder
from .encoder import EncoderConfig, EncoderWeights, LayerWeights, PromptEmbedding, EmbeddingRecord
from .encoder import TextEncoder, load_weights, encode_tokens, eos_state, config_from_archive

# archive
from .archive import read_archive, write_archive

# edit
from .edit import EditSpec, EditedEmbedding, apply_eos_edit, sweep_guidance, embedding_distance
from .edit import load_conditioning

# schedule
from .schedule import NoiseSchedule, FINAL_TIMESTEP
from .schedule import build_schedule, sample_initial_latent, cfg_combine, ddim_step
from .schedule import predict_original

# backends
from .backend import Backend, ToyBackend, Sd14Backend, BACKENDS, make_backend

# sampling
from .sampler import GenerationRequest, ImageResult, Provenance, generate, latent_digest
