"""Synthetic fixture generators for smoke tests and demos.

The aligned generator draws each paired instance from a shared low-
dimensional latent: class centers plus within-class jitter, pushed through
fixed random linear maps into the two modality spaces. Marginally each
modality is class-conditional Gaussian, and the paired language/vision
vectors of an instance carry the same latent, so a well-trained manifold
can rank the paired percept above same-class distractors.

The unstructured generator assigns class labels to isotropic Gaussian
vectors, so no model can beat chance on it.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset, EmbeddingRecord, SpeakerTraits, largest_remainder


def _split_tag(i: int, n: int, ratios) -> str:
    n_train, n_val, _ = largest_remainder(n, ratios)
    if i < n_train:
        return "train"
    if i < n_train + n_val:
        return "val"
    return "test"


def make_aligned_dataset(n_classes: int = 10, n_instances: int = 40,
                         language_dim: int = 64, vision_dim: int = 96,
                         latent_dim: int | None = None, within_scale: float = 0.30,
                         noise_scale: float = 0.02, seed: int = 0,
                         split_ratios=(0.7, 0.15, 0.15),
                         speaker_ids=None) -> Dataset:
    """Paired two-modality dataset with learnable cross-modal structure.

    Each instance is one object with one language record and one vision
    record; splits are assigned per instance, stratified by class. Class
    centers are orthonormal in the latent space (default latent_dim =
    n_classes), so within-class jitter occupies class-separating directions
    and instance identity survives alignment training. When `speaker_ids`
    is given, language records cycle through it.
    """
    latent_dim = latent_dim or n_classes
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = rng.normal(0.0, 1.0, size=(n_classes, latent_dim))
    if latent_dim >= n_classes:
        q, _ = np.linalg.qr(centers.T)
        centers = np.ascontiguousarray(q.T[:n_classes])
    else:
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    to_language = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, language_dim))
    to_vision = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, vision_dim))

    records = []
    for c in range(n_classes):
        cls = f"class_{c:02d}"
        for i in range(n_instances):
            latent = centers[c] + rng.normal(0.0, within_scale, size=latent_dim)
            lang = latent @ to_language + rng.normal(0.0, noise_scale, size=language_dim)
            vis = latent @ to_vision + rng.normal(0.0, noise_scale, size=vision_dim)
            split = _split_tag(i, n_instances, split_ratios)
            oid = f"obj_{c:02d}_{i:03d}"
            sid = speaker_ids[(c * n_instances + i) % len(speaker_ids)] if speaker_ids else None
            records.append(EmbeddingRecord(
                record_id=f"lang_{c:02d}_{i:03d}", modality="language",
                class_label=cls, object_id=oid, speaker_id=sid, split=split,
                vector=lang.astype(np.float32),
            ))
            records.append(EmbeddingRecord(
                record_id=f"vis_{c:02d}_{i:03d}", modality="vision",
                class_label=cls, object_id=oid, speaker_id=None, split=split,
                vector=vis.astype(np.float32),
            ))
    return Dataset(records)


def make_unstructured_dataset(n_classes: int = 20, n_instances: int = 30,
                              language_dim: int = 32, vision_dim: int = 48,
                              seed: int = 0,
                              split_ratios=(0.6, 0.2, 0.2)) -> Dataset:
    """Paired dataset whose vectors carry no class structure at all."""
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for c in range(n_classes):
        cls = f"class_{c:02d}"
        for i in range(n_instances):
            split = _split_tag(i, n_instances, split_ratios)
            oid = f"obj_{c:02d}_{i:03d}"
            records.append(EmbeddingRecord(
                record_id=f"lang_{c:02d}_{i:03d}", modality="language",
                class_label=cls, object_id=oid, speaker_id=None, split=split,
                vector=rng.normal(0, 1, language_dim).astype(np.float32),
            ))
            records.append(EmbeddingRecord(
                record_id=f"vis_{c:02d}_{i:03d}", modality="vision",
                class_label=cls, object_id=oid, speaker_id=None, split=split,
                vector=rng.normal(0, 1, vision_dim).astype(np.float32),
            ))
    return Dataset(records)


def make_trait_cohort(n_speakers: int = 8, n_classes: int = 6,
                      examples_per_class: int = 3, language_dim: int = 24,
                      vision_dim: int = 32, latent_dim: int = 6,
                      degrade_trait: str = "accent", degrade_scale: float = 3.0,
                      seed: int = 0):
    """Cohort for the trait studies: a paired dataset, trait annotations,
    and one binary trait whose speakers get noise-degraded language vectors.

    Speakers alternate on the degraded trait; other traits vary benignly.
    Returns (dataset, traits).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = rng.normal(0.0, 1.0, size=(n_classes, latent_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    to_language = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, language_dim))
    to_vision = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, vision_dim))

    records = []
    traits = {}
    for s in range(n_speakers):
        sid = f"spk_{s:02d}"
        degraded = s % 2 == 1
        values = {
            "gender": ("man", "woman")[s % 2],
            "accent": 0, "creak": int(s % 3 == 0), "hoarseness": 0,
            "muffledness": 1 + s % 3, "volume": 2 + s % 2,
            "background_noise": 1 + s % 2,
        }
        values[degrade_trait] = int(degraded)
        traits[sid] = SpeakerTraits(speaker_id=sid, **values)
        for c in range(n_classes):
            cls = f"class_{c:02d}"
            for i in range(examples_per_class):
                latent = centers[c] + rng.normal(0.0, 0.3, size=latent_dim)
                lang = latent @ to_language
                if degraded:
                    lang = lang + rng.normal(0.0, degrade_scale, size=language_dim)
                oid = f"obj_{s:02d}_{c:02d}_{i}"
                records.append(EmbeddingRecord(
                    record_id=f"lang_{s:02d}_{c:02d}_{i}", modality="language",
                    class_label=cls, object_id=oid, speaker_id=sid,
                    split="unassigned",
                    vector=lang.astype(np.float32),
                ))
                vis = latent @ to_vision + rng.normal(0.0, 0.02, size=vision_dim)
                records.append(EmbeddingRecord(
                    record_id=f"vis_{s:02d}_{c:02d}_{i}", modality="vision",
                    class_label=cls, object_id=oid, speaker_id=None,
                    split="unassigned",
                    vector=vis.astype(np.float32),
                ))
    return Dataset(records), traits


def sine_clip(freq: float = 440.0, duration: float = 1.0,
              sample_rate: int = 16000, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t)


def speechlike_clip(duration: float = 1.2, sample_rate: int = 16000,
                    seed: int = 0) -> np.ndarray:
    """Deterministic pseudo-speech: pitch-modulated harmonics under a pair
    of formant-ish resonances, with an amplitude envelope and noise floor."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    pitch = 110.0 + 20.0 * np.sin(2 * np.pi * 2.3 * t)
    phase = 2 * np.pi * np.cumsum(pitch) / sample_rate
    voiced = sum(np.sin(k * phase) / k for k in range(1, 6))
    formants = (np.sin(2 * np.pi * 700 * t) * 0.3 + np.sin(2 * np.pi * 1220 * t) * 0.2)
    envelope = 0.2 + 0.8 * np.abs(np.sin(2 * np.pi * 1.7 * t))
    noise = rng.normal(0.0, 0.02, size=n)
    clip = envelope * (0.6 * voiced + 0.4 * formants * voiced) + noise
    return 0.6 * clip / np.max(np.abs(clip))


def write_wav(path, samples: np.ndarray, sample_rate: int = 16000,
              stereo: bool = False) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM WAV."""
    import wave

    pcm = np.clip(np.asarray(samples) * 32767.0, -32768, 32767).astype("<i2")
    if stereo:
        pcm = np.repeat(pcm[:, None], 2, axis=1).ravel()
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2 if stereo else 1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())
