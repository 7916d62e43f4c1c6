""" tests the guided DDIM sampler """
import io
import json

import numpy as np
import pydantic
import pytest
from PIL import Image

import eosedit as ee
from eosedit.components.archive import read_archive, sidecar_path
from eosedit.log import NumericError, ValidationError, set_logging_level

from .utils import ENCODER, clear_tmp, prepend_tmp, random_embedding

UNCOND = ENCODER.embed("")
STEPS = 10


def request(conditioning, seed=7, **kwargs) -> ee.GenerationRequest:
    return ee.GenerationRequest(
        conditioning=conditioning, unconditional=UNCOND, seed=seed, steps=STEPS, **kwargs
    )


def test_generate():
    result = ee.generate(request(ENCODER.embed("a dog")))
    assert result.pixels.shape == (64, 64, 3)
    assert result.pixels.dtype == np.uint8
    assert result.latent.shape == (4, 8, 8)
    assert result.latent.dtype == np.float32
    assert np.all(np.isfinite(result.latent))
    assert result.latent_digest == ee.latent_digest(result.latent)
    assert (result.height, result.width) == (64, 64)


def test_reproducible():
    first = ee.generate(request(ENCODER.embed("a dog")))
    second = ee.generate(request(ENCODER.embed("a dog")), backend=ee.ToyBackend())
    assert first.latent_digest == second.latent_digest
    assert np.array_equal(first.pixels, second.pixels)
    assert first == second


def test_seed_changes_image():
    first = ee.generate(request(ENCODER.embed("a dog"), seed=1))
    second = ee.generate(request(ENCODER.embed("a dog"), seed=2))
    assert first.latent_digest != second.latent_digest


def test_edit_changes_image():
    source = ENCODER.embed("a dog")
    edited = ee.apply_eos_edit(source, ENCODER.embed("a photo of a cat"), 1.0)
    plain = ee.generate(request(source))
    changed = ee.generate(request(edited))
    assert plain.latent_digest != changed.latent_digest


def test_identity_edit_keeps_image():
    source = ENCODER.embed("a dog")
    edited = ee.apply_eos_edit(source, source, 1.0)
    plain = ee.generate(request(source))
    same = ee.generate(request(edited))
    assert plain.latent_digest == same.latent_digest
    assert np.array_equal(plain.pixels, same.pixels)
    assert same.provenance.target_prompt == "a dog"
    assert same.provenance.w == 1.0
    assert plain.provenance.w is None


def test_zero_guidance_ignores_conditioning():
    dog = ee.generate(request(ENCODER.embed("a dog"), cfg_scale=0.0))
    cat = ee.generate(request(ENCODER.embed("a photo of a cat"), cfg_scale=0.0))
    assert dog.latent_digest == cat.latent_digest


def test_edited_request_stays_edited():
    edited = ee.apply_eos_edit(ENCODER.embed("a dog"), ENCODER.embed("a cat"), 2.0)
    job = request(edited)
    assert isinstance(job.conditioning, ee.EditedEmbedding)
    assert job.conditioning_embedding == edited.embedding


def test_provenance():
    result = ee.generate(request(ENCODER.embed("a dog"), cfg_scale=3.0))
    provenance = result.provenance
    assert provenance.source_prompt == "a dog"
    assert provenance.seed == 7
    assert provenance.steps == STEPS
    assert provenance.cfg_scale == 3.0
    assert provenance.backend_id == "toy"
    assert provenance.eos_index == 3
    assert provenance.eosedit_version == ee.__version__

    defaulted = ee.generate(request(ENCODER.embed("a dog")))
    assert defaulted.provenance.cfg_scale == ee.ToyBackend().default_cfg_scale


def test_progress_bar():
    quiet = ee.generate(request(ENCODER.embed("a dog")))
    shown = ee.generate(request(ENCODER.embed("a dog")), progress=True)
    assert quiet.latent_digest == shown.latent_digest


def test_request_errors():
    with pytest.raises(ValidationError):
        request(random_embedding("a dog", seed=0, d_model=32))

    with pytest.raises(pydantic.ValidationError):
        request(ENCODER.embed("a dog"), seed=-1)

    with pytest.raises(pydantic.ValidationError):
        request(ENCODER.embed("a dog"), seed=2**64)

    with pytest.raises(ValidationError):
        request(ENCODER.embed("a dog"), cfg_scale=float("inf"))

    job = request(ENCODER.embed("a dog"), backend_id="sd14")
    with pytest.raises(ValidationError):
        ee.generate(job, backend=ee.ToyBackend())


class NanBackend(ee.ToyBackend):
    """toy backend whose noise prediction blows up."""

    def predict_noise(self, latent, t, conditioning):
        return np.full(latent.shape, np.nan, dtype=np.float32)


def test_non_finite_latent():
    with pytest.raises(NumericError):
        ee.generate(request(ENCODER.embed("a dog")), backend=NanBackend())


@clear_tmp
def test_png_and_latent():
    result = ee.generate(request(ENCODER.embed("a dog")))
    path = prepend_tmp("dog.png")
    result.to_png(path)

    image = Image.open(path)
    assert image.size == (64, 64)
    assert np.array_equal(np.asarray(image.convert("RGB")), result.pixels)
    assert image.text["eosedit:seed"] == "7"
    assert json.loads(image.text["eosedit:source_prompt"]) == "a dog"
    assert image.text["eosedit:latent_digest"] == result.latent_digest

    with open(sidecar_path(path), encoding="utf-8") as f:
        record = json.load(f)
    assert record["latent_digest"] == result.latent_digest
    assert record["token_ids"] == ENCODER.tokenize("a dog").ids

    assert Image.open(io.BytesIO(result.png_bytes())).size == (64, 64)

    latent_path = prepend_tmp("dog.safetensors")
    result.save_latent(latent_path)
    tensors, metadata = read_archive(latent_path)
    assert np.array_equal(tensors["latent"], result.latent)
    assert json.loads(metadata["provenance"])["seed"] == 7


def test_step_diagnostics_only_at_debug(monkeypatch):
    """the per-step latent norm is only computed when debug messages are shown."""
    calls = []
    norm = np.linalg.norm

    def counting_norm(*args, **kwargs):
        calls.append(1)
        return norm(*args, **kwargs)

    monkeypatch.setattr(np.linalg, "norm", counting_norm)
    try:
        set_logging_level("info")
        quiet = ee.generate(request(ENCODER.embed("a dog")))
        assert calls == []

        set_logging_level("debug")
        verbose = ee.generate(request(ENCODER.embed("a dog")))
        assert len(calls) == STEPS
    finally:
        set_logging_level("info")
    assert verbose.latent_digest == quiet.latent_digest
