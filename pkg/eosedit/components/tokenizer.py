"""Byte-pair encoding tokenizer reproducing the CLIP tokenizer shipped with Stable Diffusion.

Prompts are laid out as ``[<SOS>, t1..tN, <EOS>, <EOS>, ...]`` with exactly ``context_len``
positions; the first ``<EOS>`` is the slot the prompt edit reads and writes.
"""
import html
import io
import json
import os
import unicodedata
from functools import lru_cache
from typing import BinaryIO, Dict, List, Optional, Tuple, Union

import pydantic as pd
import regex

from .base import EoseditBaseModel
from .types import TokenIds
from ..constants import CONTEXT_LEN, EOS_TOKEN, SOS_TOKEN, WORD_END
from ..log import log, EoseditKeyError, IntegrityError, ParseError, ValidationError

# a path, the raw bytes, or an open binary stream
ArtifactSource = Union[str, os.PathLike, bytes, BinaryIO]

# header line written at the top of the released merges file
MERGES_HEADER = "#version"

# word splitting pattern; literal special markers are left out so they tokenize as plain text
SPLIT_PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+""", regex.IGNORECASE
)

WHITESPACE = regex.compile(r"\s+")


@lru_cache(maxsize=None)
def bytes_to_unicode() -> Dict[int, str]:
    """Reversible map from every byte value to a printable unicode character.

    Printable latin-1 bytes map to themselves, the remaining ones are shifted past 255.
    """
    byte_values = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    code_points = list(byte_values)
    shift = 0
    for byte in range(256):
        if byte not in byte_values:
            byte_values.append(byte)
            code_points.append(256 + shift)
            shift += 1
    return dict(zip(byte_values, (chr(point) for point in code_points)))


BYTE_ENCODER = bytes_to_unicode()
BYTE_DECODER = {char: byte for byte, char in BYTE_ENCODER.items()}


def normalize_text(text: str) -> str:
    """Canonical composition, html unescaping, whitespace collapse and lowercasing."""
    text = unicodedata.normalize("NFC", text)
    text = html.unescape(html.unescape(text))
    text = WHITESPACE.sub(" ", text).strip()
    return text.lower()


def _word_pairs(word: Tuple[str, ...]) -> set:
    """Set of adjacent symbol pairs in a word."""
    return set(zip(word[:-1], word[1:]))


class Vocabulary(EoseditBaseModel):
    """Token table and ranked merge rules of a byte-pair tokenizer.

    Example
    -------
    >>> vocab = load_vocabulary("vocab.json", "merges.txt")  # doctest: +SKIP
    >>> vocab.vocab_size, vocab.sos_id, vocab.eos_id  # doctest: +SKIP
    (49408, 49406, 49407)
    """

    class Config:  # pylint: disable=too-few-public-methods
        """Vocabularies never change once loaded."""

        allow_mutation = False

    token_to_id: Dict[str, pd.NonNegativeInt] = pd.Field(
        ...,
        title="Token Table",
        description="Mapping of subword string to integer id, ids dense in [0, vocab_size).",
    )

    merges: List[Tuple[str, str]] = pd.Field(
        ...,
        title="Merge Rules",
        description="Ordered byte-pair merge rules, the list index is the rank.",
    )

    sos_id: pd.NonNegativeInt = pd.Field(
        ..., title="Start Id", description="Id of the start-of-sequence token."
    )

    eos_id: pd.NonNegativeInt = pd.Field(
        ..., title="End Id", description="Id of the end-of-sequence (and padding) token."
    )

    context_len: pd.conint(ge=2) = pd.Field(
        CONTEXT_LEN,
        title="Context Length",
        description="Number of token positions per encoded prompt.",
    )

    _ranks: Optional[Dict[Tuple[str, str], int]] = pd.PrivateAttr(None)
    _id_to_token: Optional[List[str]] = pd.PrivateAttr(None)
    _bpe_cache: Dict[str, Tuple[str, ...]] = pd.PrivateAttr(default_factory=dict)

    @pd.validator("token_to_id", always=True)
    def _ids_dense_and_injective(cls, val):
        """ids must be a permutation of range(vocab_size)."""
        ids = list(val.values())
        if len(set(ids)) != len(ids):
            raise IntegrityError("Vocabulary maps several tokens to the same id.")
        if ids and (min(ids) != 0 or max(ids) != len(ids) - 1):
            raise IntegrityError(f"Vocabulary ids must be dense in [0, {len(ids)}).")
        return val

    @pd.validator("merges", always=True)
    def _unique_merges(cls, val):
        """every merge rule has exactly one rank."""
        if len(set(val)) != len(val):
            raise IntegrityError("Merge rules contain duplicates.")
        return val

    @pd.validator("eos_id", always=True)
    def _specials_present_and_distinct(cls, val, values):
        """sos and eos ids are distinct members of the table."""
        vocab_size = len(values.get("token_to_id", {}))
        sos_id = values.get("sos_id")
        if sos_id == val:
            raise IntegrityError("Start and end tokens must have different ids.")
        for name, special_id in (("sos_id", sos_id), ("eos_id", val)):
            if special_id is not None and special_id >= vocab_size:
                raise IntegrityError(f"'{name}'={special_id} is not in the vocabulary.")
        return val

    @property
    def vocab_size(self) -> int:
        """Number of tokens in the table."""
        return len(self.token_to_id)

    @property
    def bpe_ranks(self) -> Dict[Tuple[str, str], int]:
        """Merge rule -> rank lookup."""
        if self._ranks is None:
            self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        return self._ranks

    @property
    def id_to_token(self) -> List[str]:
        """Inverse of the token table."""
        if self._id_to_token is None:
            table = [""] * self.vocab_size
            for token, token_id in self.token_to_id.items():
                table[token_id] = token
            self._id_to_token = table
        return self._id_to_token

    def bpe(self, word: str) -> Tuple[str, ...]:
        """Split a byte-mapped word into merged pieces, last piece carrying the word end marker."""
        cached = self._bpe_cache.get(word)
        if cached is not None:
            return cached

        ranks = self.bpe_ranks
        symbols = tuple(word[:-1]) + (word[-1] + WORD_END,)
        pairs = _word_pairs(symbols)

        while pairs:
            bigram = min(pairs, key=lambda pair: ranks.get(pair, float("inf")))
            if bigram not in ranks:
                break
            first, second = bigram
            merged = []
            i = 0
            while i < len(symbols):
                try:
                    j = symbols.index(first, i)
                except ValueError:
                    merged.extend(symbols[i:])
                    break
                merged.extend(symbols[i:j])
                i = j
                if i < len(symbols) - 1 and symbols[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = tuple(merged)
            if len(symbols) == 1:
                break
            pairs = _word_pairs(symbols)

        self._bpe_cache[word] = symbols
        return symbols

    def __hash__(self) -> int:
        """Hash on the identifying sizes, the full table is too large to serialize each time."""
        return hash((self.vocab_size, len(self.merges), self.sos_id, self.eos_id, self.context_len))

    def __eq__(self, other) -> bool:
        """Field by field equality."""
        if not isinstance(other, Vocabulary):
            return False
        return (
            self.token_to_id == other.token_to_id
            and self.merges == other.merges
            and (self.sos_id, self.eos_id, self.context_len)
            == (other.sos_id, other.eos_id, other.context_len)
        )


class TokenSequence(EoseditBaseModel):
    """Fixed length token ids of one prompt: ``[<SOS>, t1..tN, <EOS>, <EOS>, ...]``."""

    class Config:  # pylint: disable=too-few-public-methods
        """Token sequences never change once encoded."""

        allow_mutation = False

    ids: TokenIds = pd.Field(
        ..., title="Token Ids", description="Exactly ``context_len`` token ids."
    )

    sos_id: pd.NonNegativeInt = pd.Field(
        ..., title="Start Id", description="Id of the start-of-sequence token."
    )

    eos_id: pd.NonNegativeInt = pd.Field(
        ..., title="End Id", description="Id of the end-of-sequence (and padding) token."
    )

    eos_index: pd.PositiveInt = pd.Field(
        ..., title="EOS Index", description="Position of the first end-of-sequence token."
    )

    content_len: pd.NonNegativeInt = pd.Field(
        ..., title="Content Length", description="Number of non-special tokens."
    )

    @pd.validator("eos_index", always=True)
    def _check_layout(cls, val, values):
        """sos first, content, then eos up to the end."""
        ids = values.get("ids")
        sos_id = values.get("sos_id")
        eos_id = values.get("eos_id")
        if ids is None or sos_id is None or eos_id is None:
            return val
        if not 1 <= val <= len(ids) - 1:
            raise ValidationError(f"eos_index={val} outside [1, {len(ids) - 1}].")
        if ids[0] != sos_id:
            raise ValidationError(f"first token must be the start token {sos_id}, got {ids[0]}.")
        if sos_id in ids[1:]:
            raise ValidationError("start token found past position 0.")
        if eos_id in ids[:val]:
            raise ValidationError(f"end token found before eos_index={val}.")
        if any(token_id != eos_id for token_id in ids[val:]):
            raise ValidationError(f"positions from eos_index={val} on must all be {eos_id}.")
        return val

    @pd.validator("content_len", always=True)
    def _content_len_matches(cls, val, values):
        """N = eos_index - 1."""
        eos_index = values.get("eos_index")
        if eos_index is not None and val != eos_index - 1:
            raise ValidationError(f"content_len={val} must equal eos_index - 1 = {eos_index - 1}.")
        return val

    @property
    def context_len(self) -> int:
        """Number of token positions."""
        return len(self.ids)

    @property
    def content_ids(self) -> List[int]:
        """Ids between the start token and the first end token."""
        return self.ids[1 : self.eos_index]


""" loading """


def _read_bytes(source: ArtifactSource) -> bytes:
    """Read a whole artifact given as bytes, path or binary stream."""
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as file_handle:
            return file_handle.read()
    if isinstance(source, io.TextIOBase):
        return source.read().encode("utf-8")
    return source.read()


def _decode_utf8(data: bytes, what: str) -> str:
    """utf-8 decode, reporting the line holding the first bad byte."""
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        line_number = data[: e.start].count(b"\n") + 1
        raise ParseError(f"{what} is not valid utf-8.", line_number=line_number) from e


def _parse_vocab_json(text: str) -> Dict[str, int]:
    """Parse the ``{"token": id, ...}`` listing, rejecting duplicate tokens."""

    def no_duplicates(pairs):
        table = {}
        for token, token_id in pairs:
            if token in table:
                raise IntegrityError(f"duplicate token {token!r} in vocabulary.")
            table[token] = token_id
        return table

    try:
        table = json.loads(text, object_pairs_hook=no_duplicates)
    except json.JSONDecodeError as e:
        raise ParseError(f"vocabulary json: {e.msg}.", line_number=e.lineno) from e
    if not isinstance(table, dict):
        raise ParseError("vocabulary json must be an object.", line_number=1)
    for token, token_id in table.items():
        if not isinstance(token_id, int) or isinstance(token_id, bool):
            raise ParseError(f"id of token {token!r} is not an integer: {token_id!r}.")
    return table


def _parse_vocab_lines(text: str) -> Dict[str, int]:
    """Parse a ``token<TAB>id`` per line listing."""
    table = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        token, sep, token_id = line.rpartition("\t")
        if not sep or not token_id.strip().isdigit():
            raise ParseError(f"expected 'token<TAB>id', got {line!r}.", line_number=line_number)
        if token in table:
            raise IntegrityError(f"duplicate token {token!r} in vocabulary (line {line_number}).")
        table[token] = int(token_id)
    return table


def _parse_merges(text: str) -> List[Tuple[str, str]]:
    """Parse one ``left right`` merge per line, optional version header first."""
    merges = []
    seen = set()
    for line_number, line in enumerate(text.splitlines(), start=1):
        if line_number == 1 and line.startswith(MERGES_HEADER):
            continue
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected two symbols, got {line!r}.", line_number=line_number)
        pair = (parts[0], parts[1])
        if pair in seen:
            raise IntegrityError(f"duplicate merge {line!r} (line {line_number}).")
        seen.add(pair)
        merges.append(pair)
    return merges


def load_vocabulary(
    vocab_source: ArtifactSource, merges_source: ArtifactSource, context_len: int = CONTEXT_LEN
) -> Vocabulary:
    """Load a :class:`Vocabulary` from the tokenizer artifacts of a checkpoint.

    Parameters
    ----------
    vocab_source : Union[str, bytes, BinaryIO]
        ``vocab.json`` token to id listing (a ``token<TAB>id`` per line listing is also read).
    merges_source : Union[str, bytes, BinaryIO]
        ``merges.txt``, one merge pair per line in rank order, optional ``#version`` header.
    context_len : int = 77
        Token positions per encoded prompt.

    Returns
    -------
    :class:`Vocabulary`
        Vocabulary with ``sos_id`` and ``eos_id`` read from the table.
    """
    vocab_text = _decode_utf8(_read_bytes(vocab_source), "vocabulary")
    if vocab_text.lstrip().startswith("{"):
        token_to_id = _parse_vocab_json(vocab_text)
    else:
        token_to_id = _parse_vocab_lines(vocab_text)

    merges = _parse_merges(_decode_utf8(_read_bytes(merges_source), "merges"))

    for special in (SOS_TOKEN, EOS_TOKEN):
        if special not in token_to_id:
            raise IntegrityError(f"special token {special!r} missing from vocabulary.")

    vocab = Vocabulary(
        token_to_id=token_to_id,
        merges=merges,
        sos_id=token_to_id[SOS_TOKEN],
        eos_id=token_to_id[EOS_TOKEN],
        context_len=context_len,
    )
    log.info(f"Loaded vocabulary with {vocab.vocab_size} tokens and {len(merges)} merges.")
    return vocab


""" encoding """


def _piece_ids(vocab: Vocabulary, piece: str) -> List[int]:
    """Id of a piece, falling back to its characters when the piece is not in the table."""
    token_id = vocab.token_to_id.get(piece)
    if token_id is not None:
        return [token_id]

    body = piece[: -len(WORD_END)] if piece.endswith(WORD_END) else piece
    chars = list(body)
    if piece.endswith(WORD_END) and chars:
        chars[-1] += WORD_END
    ids = []
    for char in chars:
        char_id = vocab.token_to_id.get(char)
        if char_id is None:
            log.warning(f"symbol {char!r} is not in the vocabulary, dropped.")
            continue
        ids.append(char_id)
    return ids


def encode(vocab: Vocabulary, text: str) -> TokenSequence:
    """Tokenize a prompt into a fixed length :class:`TokenSequence`.

    Parameters
    ----------
    vocab : :class:`Vocabulary`
        Token table and merge rules.
    text : str
        Any unicode prompt, empty allowed.

    Returns
    -------
    :class:`TokenSequence`
        ``[sos, pieces..., eos]`` truncated to ``context_len`` and padded with ``eos``.
    """
    max_content = vocab.context_len - 2
    content = []
    for word in SPLIT_PATTERN.findall(normalize_text(text)):
        mapped = "".join(BYTE_ENCODER[byte] for byte in word.encode("utf-8"))
        for piece in vocab.bpe(mapped):
            content.extend(_piece_ids(vocab, piece))
        if len(content) >= max_content:
            break
    content = content[:max_content]

    ids = [vocab.sos_id] + content + [vocab.eos_id]
    ids += [vocab.eos_id] * (vocab.context_len - len(ids))
    return TokenSequence(
        ids=ids,
        sos_id=vocab.sos_id,
        eos_id=vocab.eos_id,
        eos_index=len(content) + 1,
        content_len=len(content),
    )


def decode(vocab: Vocabulary, seq: TokenSequence) -> str:
    """Normalized text of the content tokens of a sequence, specials and padding stripped."""
    table = vocab.id_to_token
    tokens = []
    for token_id in seq.content_ids:
        if not 0 <= token_id < len(table):
            raise EoseditKeyError(f"token id {token_id} outside vocabulary of size {len(table)}.")
        tokens.append(table[token_id])

    raw = bytearray()
    for char in "".join(tokens):
        byte = BYTE_DECODER.get(char)
        raw.extend(char.encode("utf-8") if byte is None else bytes((byte,)))
    text = raw.decode("utf-8", errors="replace").replace(WORD_END, " ")
    return WHITESPACE.sub(" ", text).strip()


def eos_index_of(seq: TokenSequence) -> int:
    """Position of the first end-of-sequence token."""
    try:
        return seq.ids.index(seq.eos_id)
    except ValueError as e:
        raise IntegrityError(f"no end token {seq.eos_id} in sequence.") from e
