"""Frozen vision/language encoders with pooled outputs.

Two backends: ``hf`` loads the published ViT/BERT checkpoints (needs the
weights on disk or hub access); ``tiny`` builds small randomly-initialized
transformers from config with a fixed seed, fully offline and deterministic,
for smoke corpora and tests.  Pooling uses the encoder's designated summary
representation (the pooler output, falling back to the class token).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image
from transformers import BertConfig, BertModel, ViTConfig, ViTModel

HF_VIT = "google/vit-base-patch16-224"
HF_BERT = "bert-base-uncased"
BACKENDS = ("hf", "tiny")

_TINY_SEED = 0x5EED


def _pooled(output) -> torch.Tensor:
    if getattr(output, "pooler_output", None) is not None:
        return output.pooler_output
    return output.last_hidden_state[:, 0]


@dataclass
class VisualEncoder:
    model: ViTModel
    image_size: int

    @property
    def dim(self) -> int:
        return int(self.model.config.hidden_size)

    def preprocess(self, image: Image.Image) -> torch.Tensor:
        image = image.convert("RGB").resize((self.image_size, self.image_size), Image.BICUBIC)
        arr = np.asarray(image, dtype=np.float32) / 255.0
        arr = (arr - 0.5) / 0.5
        return torch.from_numpy(arr.transpose(2, 0, 1))

    @torch.no_grad()
    def encode(self, images: list[Image.Image]) -> np.ndarray:
        batch = torch.stack([self.preprocess(img) for img in images])
        return _pooled(self.model(pixel_values=batch)).numpy().astype(np.float32)


class HashTokenizer:
    """Deterministic whitespace tokenizer for the tiny backend: no vocab files."""

    def __init__(self, vocab_size: int, max_length: int):
        self.vocab_size = vocab_size
        self.max_length = max_length
        self.pad_id, self.cls_id, self.sep_id = 0, 1, 2

    def _token_id(self, token: str) -> int:
        digest = hashlib.sha256(token.lower().encode("utf-8")).digest()
        return 3 + int.from_bytes(digest[:4], "little") % (self.vocab_size - 3)

    def __call__(self, texts: list[str]) -> dict[str, torch.Tensor]:
        rows = []
        for text in texts:
            ids = [self.cls_id]
            ids += [self._token_id(t) for t in text.split()][: self.max_length - 2]
            ids.append(self.sep_id)
            rows.append(ids)
        width = max(len(r) for r in rows)
        input_ids = torch.full((len(rows), width), self.pad_id, dtype=torch.long)
        attention = torch.zeros((len(rows), width), dtype=torch.long)
        for i, r in enumerate(rows):
            input_ids[i, : len(r)] = torch.tensor(r)
            attention[i, : len(r)] = 1
        return {"input_ids": input_ids, "attention_mask": attention}


@dataclass
class TextualEncoder:
    model: BertModel
    tokenizer: object
    max_length: int

    @property
    def dim(self) -> int:
        return int(self.model.config.hidden_size)

    @torch.no_grad()
    def encode(self, texts: list[str]) -> np.ndarray:
        if isinstance(self.tokenizer, HashTokenizer):
            encoded = self.tokenizer(texts)
        else:
            encoded = self.tokenizer(
                texts, padding=True, truncation=True, max_length=self.max_length,
                return_tensors="pt",
            )
            encoded = {k: v for k, v in encoded.items() if k in ("input_ids", "attention_mask", "token_type_ids")}
        return _pooled(self.model(**encoded)).numpy().astype(np.float32)


def build_visual_encoder(backend: str = "hf") -> VisualEncoder:
    if backend == "hf":
        model = ViTModel.from_pretrained(HF_VIT)
    elif backend == "tiny":
        torch.manual_seed(_TINY_SEED)
        model = ViTModel(
            ViTConfig(
                hidden_size=32, num_hidden_layers=2, num_attention_heads=2,
                intermediate_size=64, image_size=32, patch_size=8, num_channels=3,
            )
        )
    else:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    model.eval()
    return VisualEncoder(model=model, image_size=int(model.config.image_size))


def build_textual_encoder(backend: str = "hf") -> TextualEncoder:
    if backend == "hf":
        from transformers import AutoTokenizer

        model = BertModel.from_pretrained(HF_BERT)
        tokenizer = AutoTokenizer.from_pretrained(HF_BERT)
        max_length = 128
    elif backend == "tiny":
        torch.manual_seed(_TINY_SEED + 1)
        config = BertConfig(
            vocab_size=512, hidden_size=32, num_hidden_layers=2, num_attention_heads=2,
            intermediate_size=64, max_position_embeddings=64,
        )
        model = BertModel(config)
        tokenizer = HashTokenizer(vocab_size=config.vocab_size, max_length=64)
        max_length = 64
    else:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    model.eval()
    return TextualEncoder(model=model, tokenizer=tokenizer, max_length=max_length)
