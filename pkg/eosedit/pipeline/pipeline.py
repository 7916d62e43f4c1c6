"""The pipeline commands: tokenize, encode, edit, generate, paired compare, concatenation
baseline, guidance sweep and the moderation recipe."""
import json
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pydantic as pd

from .outputs import (
    StagedOutputs,
    SweepRow,
    image_grid,
    report_name,
    sweep_csv,
    sweep_dataset,
    write_png,
    write_report,
)
from .run_config import RunConfig
from ..components.backend import Backend, make_backend
from ..components.base import EoseditBaseModel
from ..components.fileio import atomic_write_text
from ..components.edit import (
    EditedEmbedding,
    apply_eos_edit,
    embedding_distance,
    load_conditioning,
    sweep_guidance,
)
from ..components.encoder import (
    EncoderConfig,
    PromptEmbedding,
    TextEncoder,
    config_from_archive,
    load_weights,
)
from ..components.sampler import GenerationRequest, ImageResult, Provenance, generate
from ..components.tokenizer import Vocabulary, decode, encode, load_vocabulary, normalize_text
from ..components.types import Ax, TokenIds
from ..components.viz import add_ax_if_none, plot_tradeoff
from ..config import config
from ..log import log, ConfigError, InputError
from ..version import __version__

Item = TypeVar("Item")
Result = TypeVar("Result")

EMBEDDING_SUFFIX = ".safetensors"


""" reports """


class CommandRecord(EoseditBaseModel):
    """The command and arguments that produced an artifact, enough to re-run it."""

    command: str = pd.Field(..., title="Command")
    arguments: Dict[str, Any] = pd.Field(default_factory=dict, title="Arguments")
    run_config: RunConfig = pd.Field(..., title="Run Config")
    eosedit_version: str = pd.Field(__version__, title="Version")


class TokenizeReport(EoseditBaseModel):
    """Token layout of one prompt."""

    prompt: str = pd.Field(..., title="Prompt")
    normalized_prompt: str = pd.Field(..., title="Normalized Prompt")
    ids: TokenIds = pd.Field(..., title="Token Ids")
    eos_index: int = pd.Field(..., title="EOS Index")
    content_len: int = pd.Field(..., title="Content Length")
    decoded: str = pd.Field(..., title="Decoded")


class PairRecord(EoseditBaseModel):
    """One same-seed pair of a comparison."""

    seed: int = pd.Field(..., title="Seed")
    original_image: str = pd.Field(..., title="Original Image")
    edited_image: str = pd.Field(..., title="Edited Image")
    original_digest: str = pd.Field(..., title="Original Latent Digest")
    edited_digest: str = pd.Field(..., title="Edited Latent Digest")


class GenerateReport(EoseditBaseModel):
    """Plain generation from a prompt or a dumped, possibly edited, embedding."""

    record: CommandRecord = pd.Field(..., title="Command")
    prompt: Optional[str] = pd.Field(None, title="Prompt")
    embedding: Optional[str] = pd.Field(
        None, title="Embedding", description="Path of the dumped embedding generated from."
    )
    seed: int = pd.Field(..., title="Seed")
    steps: int = pd.Field(..., title="Steps")
    image: str = pd.Field(..., title="Image")
    latent_digest: str = pd.Field(..., title="Latent Digest")
    provenance: Provenance = pd.Field(..., title="Provenance")


class CompareReport(EoseditBaseModel):
    """Paired generation of a prompt and its ``<EOS>`` edit."""

    record: CommandRecord = pd.Field(..., title="Command")
    source_prompt: str = pd.Field(..., title="Source Prompt")
    target_prompt: str = pd.Field(..., title="Target Prompt")
    normalized_source: str = pd.Field(..., title="Normalized Source")
    normalized_target: str = pd.Field(..., title="Normalized Target")
    w: float = pd.Field(..., title="Edit Scale")
    steps: int = pd.Field(..., title="Steps")
    cfg_scale: float = pd.Field(..., title="CFG Scale")
    backend_id: str = pd.Field(..., title="Backend")
    embedding_distance: float = pd.Field(..., title="Embedding Distance")
    target_eos_norm: float = pd.Field(..., title="Target EOS Norm")
    pairs: List[PairRecord] = pd.Field(..., title="Pairs")


class BaselineReport(EoseditBaseModel):
    """Generation from the source prompt with the attributes appended as text."""

    record: CommandRecord = pd.Field(..., title="Command")
    source_prompt: str = pd.Field(..., title="Source Prompt")
    attributes: List[str] = pd.Field(..., title="Attributes")
    concat_prompt: str = pd.Field(..., title="Concatenated Prompt")
    source_token_ids: TokenIds = pd.Field(..., title="Source Token Ids")
    concat_token_ids: TokenIds = pd.Field(..., title="Concatenated Token Ids")
    seed: int = pd.Field(..., title="Seed")
    image: str = pd.Field(..., title="Image")
    latent_digest: str = pd.Field(..., title="Latent Digest")


class SweepReport(EoseditBaseModel):
    """Guidance scale sweep at a fixed seed."""

    record: CommandRecord = pd.Field(..., title="Command")
    source_prompt: str = pd.Field(..., title="Source Prompt")
    target_prompt: str = pd.Field(..., title="Target Prompt")
    rows: List[SweepRow] = pd.Field(..., title="Rows")
    grid_image: str = pd.Field(..., title="Grid Image")
    table: str = pd.Field(..., title="Table", description="File name of the csv rows.")

    @property
    def w_values(self) -> List[float]:
        """Guidance scales in sweep order."""
        return [row.w for row in self.rows]

    @property
    def distances(self) -> List[float]:
        """Embedding distance to the source per row."""
        return [row.embedding_distance for row in self.rows]

    def to_dataset(self):
        """Rows as an ``xarray.Dataset`` indexed by ``w``."""
        return sweep_dataset(self.rows)

    @add_ax_if_none
    def plot(self, ax: Ax = None) -> Ax:
        """Trade-off curve of embedding distance against guidance scale."""
        ax = plot_tradeoff(self.w_values, self.distances, ax=ax)
        ax.set_title(f"{self.source_prompt!r} edited toward {self.target_prompt!r}")
        return ax


""" pipeline """


def resolve_encoder_config(run_config: RunConfig) -> EncoderConfig:
    """Encoder architecture: the run config's, else the archive's, else SD 1.4."""
    if run_config.encoder is not None:
        return run_config.encoder
    if run_config.encoder_weights_path is not None:
        config = config_from_archive(run_config.encoder_weights_path)
        if config is not None:
            return config
    log.info("No encoder config given or stored in the archive, using SD 1.4.")
    return EncoderConfig.sd14()


def load_run_vocabulary(run_config: RunConfig, config: EncoderConfig = None) -> Vocabulary:
    """Tokenizer of a run, with the context length of its encoder."""
    config = resolve_encoder_config(run_config) if config is None else config
    return load_vocabulary(
        run_config.vocab_path, run_config.merges_path, context_len=config.context_len
    )


def tokenize_prompt(vocab: Vocabulary, prompt: str) -> TokenizeReport:
    """Token layout of a prompt, with its normalized and decoded forms."""
    seq = encode(vocab, prompt)
    return TokenizeReport(
        prompt=prompt,
        normalized_prompt=normalize_text(prompt),
        ids=seq.ids,
        eos_index=seq.eos_index,
        content_len=seq.content_len,
        decoded=decode(vocab, seq),
    )


class Pipeline(EoseditBaseModel):
    """Text encoder, sampling backend and run configuration bundled for the commands.

    Example
    -------
    >>> pipeline = Pipeline.from_config(RunConfig.load("run.yaml"))  # doctest: +SKIP
    >>> images, report = pipeline.compare("a headshot of a woman", "eyeglasses")  # doctest: +SKIP
    """

    run_config: RunConfig = pd.Field(..., title="Run Config")

    encoder: TextEncoder = pd.Field(..., title="Text Encoder")

    backend: Backend = pd.Field(..., title="Backend")

    _unconditional: Optional[PromptEmbedding] = pd.PrivateAttr(None)

    @classmethod
    def from_config(cls, run_config: RunConfig, backend: Backend = None) -> "Pipeline":
        """Load the tokenizer, the encoder and the backend named by a run config."""
        if run_config.encoder_weights_path is None:
            raise ConfigError("no encoder weights given (--encoder-weights).")
        config = resolve_encoder_config(run_config)
        vocab = load_run_vocabulary(run_config, config)
        weights = load_weights(run_config.encoder_weights_path, config)
        if backend is None:
            backend = make_backend(run_config.backend_id, model_path=run_config.model_path)
        encoder = TextEncoder(vocab=vocab, weights=weights, config=config)
        return cls(run_config=run_config, encoder=encoder, backend=backend)

    def __hash__(self) -> int:
        """Hash on the parts, without serializing the encoder weights."""
        return hash((hash(self.run_config), hash(self.encoder), hash(self.backend)))

    """ helpers """

    @property
    def unconditional(self) -> PromptEmbedding:
        """Embedding of the empty prompt, computed once."""
        if self._unconditional is None:
            self._unconditional = self.encoder.embed("")
        return self._unconditional

    def embed(self, prompt: str) -> PromptEmbedding:
        """Encode a prompt, logging it raw and normalized."""
        log.info(f"Prompt {prompt!r} (normalized {normalize_text(prompt)!r}).")
        return self.encoder.embed(prompt)

    def _record(self, command: str, **arguments) -> CommandRecord:
        return CommandRecord(command=command, arguments=arguments, run_config=self.run_config)

    def _steps(self, steps: Optional[int]) -> int:
        return self.run_config.steps if steps is None else steps

    def _seed(self, seed: Optional[int]) -> int:
        return self.run_config.seed if seed is None else seed

    def _w(self, w: Optional[float]) -> float:
        return self.run_config.w if w is None else w

    def cfg_scale(self) -> float:
        """Guidance scale in effect: the run config's, else the backend default."""
        if self.run_config.cfg_scale is None:
            return self.backend.default_cfg_scale
        return self.run_config.cfg_scale

    def _map(self, func: Callable[[Item], Result], items: Sequence[Item]) -> List[Result]:
        """Apply ``func`` to independent items, in parallel when configured, in input order."""
        items = list(items)
        num_workers = self.run_config.num_workers or config.num_workers
        if num_workers == 1 or len(items) < 2:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=num_workers) as executor:
            return list(executor.map(func, items))

    def render(
        self,
        conditioning: Union[EditedEmbedding, PromptEmbedding],
        seed: int,
        steps: Optional[int] = None,
        progress: bool = False,
    ) -> ImageResult:
        """Generate from a (possibly edited) embedding against the empty prompt anchor."""
        request = GenerationRequest(
            conditioning=conditioning,
            unconditional=self.unconditional,
            seed=seed,
            steps=self._steps(steps),
            cfg_scale=self.cfg_scale(),
            backend_id=self.backend.backend_id,
        )
        return generate(request, backend=self.backend, progress=progress)

    """ commands """

    def tokenize(self, prompt: str) -> TokenizeReport:
        """Token layout of a prompt."""
        return tokenize_prompt(self.encoder.vocab, prompt)

    def encode(self, prompt: str, name: Optional[str] = None) -> PromptEmbedding:
        """Encode a prompt, dumping it to ``out_dir/name.safetensors`` when a name is given."""
        embedding = self.embed(prompt)
        if name is not None:
            with StagedOutputs(self.run_config.out_dir) as staged:
                embedding.save(staged.path(name + EMBEDDING_SUFFIX), config=self.encoder.config)
        return embedding

    def edit(
        self,
        source_prompt: Optional[str],
        target_prompt: str,
        w: Optional[float] = None,
        source_embedding: Optional[str] = None,
        name: Optional[str] = None,
    ) -> EditedEmbedding:
        """Apply an ``<EOS>`` edit; the source is a prompt or a dumped (possibly edited)
        embedding, which chains edits."""
        if source_embedding is not None:
            source = PromptEmbedding.load(source_embedding)
        elif source_prompt is not None:
            source = self.embed(source_prompt)
        else:
            raise InputError("edit needs a source prompt or a source embedding.")
        edited = apply_eos_edit(source, self.embed(target_prompt), self._w(w))
        if name is not None:
            with StagedOutputs(self.run_config.out_dir) as staged:
                edited.save(staged.path(name + EMBEDDING_SUFFIX), config=self.encoder.config)
        return edited

    def generate(
        self,
        prompt: Optional[str] = None,
        embedding: Optional[str] = None,
        seed: Optional[int] = None,
        steps: Optional[int] = None,
        name: str = "generate",
        progress: bool = False,
    ) -> ImageResult:
        """Plain generation from a prompt or from a dumped embedding; a dumped edit keeps its
        target prompt and scale in the provenance."""
        if embedding is not None:
            conditioning = load_conditioning(embedding)
        elif prompt is not None:
            conditioning = self.embed(prompt)
        else:
            raise InputError("generate needs a prompt or an embedding.")
        seed = self._seed(seed)
        steps = self._steps(steps)
        result = self.render(conditioning, seed, steps, progress=progress)

        image_name = f"{name}_seed{seed}.png"
        with StagedOutputs(self.run_config.out_dir) as staged:
            result.to_png(staged.path(image_name))
            report = GenerateReport(
                record=self._record(
                    "generate", prompt=prompt, embedding=embedding, seed=seed, steps=steps
                ),
                prompt=prompt,
                embedding=embedding,
                seed=seed,
                steps=steps,
                image=image_name,
                latent_digest=result.latent_digest,
                provenance=result.provenance,
            )
            write_report(staged.path(report_name(name)), report)
        return result

    def compare(
        self,
        source_prompt: str,
        target_prompt: str,
        w: Optional[float] = None,
        seed: Optional[int] = None,
        steps: Optional[int] = None,
        num_seeds: int = 1,
        command: str = "compare",
    ) -> Tuple[List[Tuple[ImageResult, ImageResult]], CompareReport]:
        """Same-seed pairs: the source prompt as is, and with its ``<EOS>`` edited.

        Parameters
        ----------
        source_prompt : str
            Prompt generated unedited (image A) and edited (image B).
        target_prompt : str
            Prompt whose ``<EOS>`` state is injected.
        w : float = None
            Edit scale, the run config's if not given.
        seed : int = None
            First seed, the run config's if not given.
        steps : int = None
            Denoising steps, the run config's if not given.
        num_seeds : int = 1
            Pairs for seeds ``seed .. seed + num_seeds - 1``.
        command : str = "compare"
            Name used for the artifacts.

        Returns
        -------
        Tuple[List[Tuple[:class:`.ImageResult`, :class:`.ImageResult`]], :class:`CompareReport`]
            ``(original, edited)`` per seed, and the report written next to the images.
        """
        if num_seeds < 1:
            raise InputError(f"num_seeds must be positive, given {num_seeds}.")
        w = self._w(w)
        seed = self._seed(seed)
        steps = self._steps(steps)

        source = self.embed(source_prompt)
        target = self.embed(target_prompt)
        edited = apply_eos_edit(source, target, w)
        distance = embedding_distance(source, edited.embedding)

        seeds = range(seed, seed + num_seeds)
        jobs = [(conditioning, s) for s in seeds for conditioning in (source, edited)]
        results = self._map(lambda job: self.render(job[0], job[1], steps), jobs)
        pairs = list(zip(results[0::2], results[1::2]))

        records = []
        with StagedOutputs(self.run_config.out_dir) as staged:
            for pair_seed, (original, edited_image) in zip(seeds, pairs):
                original_name = f"{command}_seed{pair_seed}_original.png"
                edited_name = f"{command}_seed{pair_seed}_edited.png"
                original.to_png(staged.path(original_name))
                edited_image.to_png(staged.path(edited_name))
                records.append(
                    PairRecord(
                        seed=pair_seed,
                        original_image=original_name,
                        edited_image=edited_name,
                        original_digest=original.latent_digest,
                        edited_digest=edited_image.latent_digest,
                    )
                )
            report = CompareReport(
                record=self._record(
                    command,
                    source_prompt=source_prompt,
                    target_prompt=target_prompt,
                    w=w,
                    seed=seed,
                    steps=steps,
                    num_seeds=num_seeds,
                ),
                source_prompt=source_prompt,
                target_prompt=target_prompt,
                normalized_source=normalize_text(source_prompt),
                normalized_target=normalize_text(target_prompt),
                w=w,
                steps=steps,
                cfg_scale=self.cfg_scale(),
                backend_id=self.backend.backend_id,
                embedding_distance=distance,
                target_eos_norm=edited.target_eos_norm,
                pairs=records,
            )
            write_report(staged.path(report_name(command)), report)

        log.info(f"{command}: embedding distance {distance:.6g} over {num_seeds} seed(s).")
        return pairs, report

    def moderate(
        self,
        unsafe_prompt: str,
        replacement_prompt: str,
        w: Optional[float] = None,
        seed: Optional[int] = None,
        steps: Optional[int] = None,
        num_seeds: int = 1,
    ) -> Tuple[List[Tuple[ImageResult, ImageResult]], CompareReport]:
        """Moderation by ``<EOS>`` edit: :meth:`compare` with the unsafe prompt as source and the
        replacement as target. No content classifier is involved."""
        return self.compare(
            unsafe_prompt,
            replacement_prompt,
            w=w,
            seed=seed,
            steps=steps,
            num_seeds=num_seeds,
            command="moderate",
        )

    def baseline_concat(
        self,
        source_prompt: str,
        attributes: Sequence[str],
        seed: Optional[int] = None,
        steps: Optional[int] = None,
    ) -> Tuple[ImageResult, BaselineReport]:
        """Generate from ``source + ", " + ", ".join(attributes)``, the text concatenation
        counterpart of an edit; no attributes means the plain source prompt."""
        attributes = list(attributes)
        concat_prompt = ", ".join([source_prompt] + attributes)
        seed = self._seed(seed)
        steps = self._steps(steps)

        result = self.render(self.embed(concat_prompt), seed, steps)
        image_name = f"baseline_seed{seed}.png"
        with StagedOutputs(self.run_config.out_dir) as staged:
            result.to_png(staged.path(image_name))
            report = BaselineReport(
                record=self._record(
                    "baseline",
                    source_prompt=source_prompt,
                    attributes=attributes,
                    seed=seed,
                    steps=steps,
                ),
                source_prompt=source_prompt,
                attributes=attributes,
                concat_prompt=concat_prompt,
                source_token_ids=self.encoder.tokenize(source_prompt).ids,
                concat_token_ids=self.encoder.tokenize(concat_prompt).ids,
                seed=seed,
                image=image_name,
                latent_digest=result.latent_digest,
            )
            write_report(staged.path(report_name("baseline")), report)
        return result, report

    def sweep(
        self,
        source_prompt: str,
        target_prompt: str,
        w_min: float,
        w_max: float,
        count: int,
        seed: Optional[int] = None,
        steps: Optional[int] = None,
    ) -> Tuple[List[ImageResult], SweepReport]:
        """One same-seed generation per evenly spaced guidance scale in ``[w_min, w_max]``.

        Writes every image, a grid of them, the ``w,embedding_distance,latent_digest,seed``
        table and a json report.
        """
        if count < 2:
            raise InputError(f"a sweep needs at least 2 points, given {count}.")
        if not (np.isfinite(w_min) and np.isfinite(w_max)) or not w_min < w_max:
            raise InputError(f"a sweep needs finite w_min < w_max, given [{w_min}, {w_max}].")
        seed = self._seed(seed)
        steps = self._steps(steps)

        w_values = [float(w) for w in np.linspace(w_min, w_max, count)]
        source = self.embed(source_prompt)
        edits = sweep_guidance(source, self.embed(target_prompt), w_values)
        results = self._map(lambda edit: self.render(edit, seed, steps), edits)

        rows = []
        with StagedOutputs(self.run_config.out_dir) as staged:
            for index, (edit, result) in enumerate(zip(edits, results)):
                image_name = f"sweep_{index:03d}.png"
                result.to_png(staged.path(image_name))
                rows.append(
                    SweepRow(
                        w=edit.applied_w,
                        embedding_distance=embedding_distance(source, edit.embedding),
                        latent_digest=result.latent_digest,
                        seed=result.provenance.seed,
                        image=image_name,
                    )
                )
            write_png(
                staged.path("sweep_grid.png"),
                image_grid([result.pixels for result in results]),
                text={"eosedit:sweep": json.dumps({"w": w_values, "seed": seed, "steps": steps})},
            )
            atomic_write_text(staged.path("sweep.csv"), sweep_csv(rows))
            report = SweepReport(
                record=self._record(
                    "sweep",
                    source_prompt=source_prompt,
                    target_prompt=target_prompt,
                    w_min=w_min,
                    w_max=w_max,
                    count=count,
                    seed=seed,
                    steps=steps,
                ),
                source_prompt=source_prompt,
                target_prompt=target_prompt,
                rows=rows,
                grid_image="sweep_grid.png",
                table="sweep.csv",
            )
            write_report(staged.path(report_name("sweep")), report)
        return results, report
