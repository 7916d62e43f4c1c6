"""Defines importable constants.

Attributes:
    SD14_VOCAB_SIZE (int): number of entries in the SD 1.4 CLIP vocabulary.
    SD14_SOS_ID (int): id of ``<|startoftext|>`` in the SD 1.4 vocabulary.
    SD14_EOS_ID (int): id of ``<|endoftext|>`` in the SD 1.4 vocabulary.
    CONTEXT_LEN (int): token positions per prompt for CLIP text towers.
"""

# special token strings of the CLIP vocabulary
SOS_TOKEN = "<|startoftext|>"
EOS_TOKEN = "<|endoftext|>"

# suffix marking the last piece of a word
WORD_END = "</w>"

# SD 1.4 text tower (CLIP ViT-L/14)
SD14_VOCAB_SIZE = 49408
SD14_SOS_ID = 49406
SD14_EOS_ID = 49407
CONTEXT_LEN = 77
SD14_D_MODEL = 768
SD14_N_LAYERS = 12
SD14_N_HEADS = 12
SD14_LAYER_NORM_EPS = 1e-5

# SD 1.4 noise schedule
NUM_TRAIN_STEPS = 1000
SD14_BETA_START = 0.00085
SD14_BETA_END = 0.012
SD14_STEPS_OFFSET = 1
SD14_LATENT_SHAPE = (4, 64, 64)
SD14_VAE_SCALE = 0.18215

# sampling defaults
DEFAULT_STEPS = 50
DEFAULT_W = 1.0
SD14_CFG_SCALE = 7.5
TOY_CFG_SCALE = 1.0

# toy backend profile
TOY_LATENT_SHAPE = (4, 8, 8)
TOY_IMAGE_SCALE = 8
TOY_BACKEND_SEED = 0

# largest seed accepted by the latent generator
MAX_SEED = 2**64 - 1
