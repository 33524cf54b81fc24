# SPDX-License-Identifier: MIT
"""
Subject-aware prompts.

An annotation request lists K in-context examples (image reference plus the ideal
annotation for it) followed by the target image. A backend answers with a JSON object
`{"has_focus": bool, "focal": str, "peripheral": str}`. Backends are pluggable: the
endpoint `"stub:"` selects a deterministic local stub, any `http(s)://` URL is reached
with aiohttp. See docs/ANNOTATION_WIRE.md for the wire format.

Toy training does not need a VLM: scene captions are produced directly from the scene
description over a closed vocabulary (`synthetic_caption`).
"""

import asyncio
import base64
from dataclasses import asdict, dataclass, field
import hashlib
import itertools
import json
import logging
from pathlib import Path
import typing as tp

import aiohttp
import torch

from .modules.tokens import BOS_ID, PAD_ID

logger = logging.getLogger(__name__)

STUB_ENDPOINT = "stub:"
# Placeholder instruction; the real annotator prompt is not part of this repository.
DEFAULT_INSTRUCTION = (
    "Identify the focal subject of the last image and describe it. "
    "Then describe the rest of the scene, speculating where details are unclear. "
    "Answer as JSON with keys has_focus, focal, peripheral."
)


class AnnotationError(RuntimeError):
    pass


class AnnotationTransportError(AnnotationError):
    """The backend could not be reached or answered with a non-success status."""


class AnnotationParseError(AnnotationError):
    """The backend answered, but the reply does not follow the reply schema."""


# Caption vocabulary

FUNCTION_WORDS = {"a": 2, "on": 3, "at": 4}
SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan", "white", "black")
BACKGROUNDS = ("plain", "stripes", "checker", "gradient", "noise")
POSITIONS = ("center", "top-left", "top-right", "bottom-left", "bottom-right")


def _build_vocab() -> dict[str, int]:
    vocab = {"<pad>": PAD_ID, "<bos>": BOS_ID, **FUNCTION_WORDS}
    next_id = max(vocab.values()) + 1
    for word in itertools.chain(SHAPES, COLORS, BACKGROUNDS, POSITIONS):
        vocab[word] = next_id
        next_id += 1
    return vocab


VOCAB = _build_vocab()
ID_TO_WORD = {v: k for k, v in VOCAB.items()}
CAPTION_LEN = 8


@dataclass(frozen=True)
class SceneSpec:
    shape: str
    color: str
    background: str
    position: str

    def validate(self) -> None:
        for name, allowed in (
            ("shape", SHAPES), ("color", COLORS), ("background", BACKGROUNDS),
            ("position", POSITIONS),
        ):
            value = getattr(self, name)
            if value not in allowed:
                raise ValueError(f"unknown {name} {value!r}, expected one of {allowed}")

    def to_dict(self) -> dict[str, str]:
        return asdict(self)


def all_scene_specs() -> tp.Iterator[SceneSpec]:
    for shape, color, background, position in itertools.product(SHAPES, COLORS, BACKGROUNDS, POSITIONS):
        yield SceneSpec(shape, color, background, position)


def synthetic_caption(spec: SceneSpec, text_len: int = CAPTION_LEN) -> torch.Tensor:
    """`[bos, a, color, shape, on, background, at, position]`, padded to `text_len`."""
    spec.validate()
    words = ["<bos>", "a", spec.color, spec.shape, "on", spec.background, "at", spec.position]
    if text_len < len(words):
        raise ValueError(f"text_len {text_len} cannot hold a {len(words)}-word caption")
    ids = [VOCAB[w] for w in words] + [PAD_ID] * (text_len - len(words))
    return torch.tensor(ids, dtype=torch.long)


def encode_caption_text(text: str, text_len: int = CAPTION_LEN) -> torch.Tensor:
    """Project free text on the caption vocabulary. Unknown words are skipped."""
    words = [w.strip(".,;:!?\"'()") for w in text.lower().split()]
    ids = [BOS_ID] + [VOCAB[w] for w in words if w in VOCAB and VOCAB[w] > BOS_ID]
    ids = ids[:text_len]
    ids += [PAD_ID] * (text_len - len(ids))
    return torch.tensor(ids, dtype=torch.long)


def decode_caption(ids: tp.Union[torch.Tensor, tp.Sequence[int]]) -> str:
    ids = ids.tolist() if isinstance(ids, torch.Tensor) else list(ids)
    return " ".join(ID_TO_WORD[i] for i in ids if i not in (PAD_ID, BOS_ID))


# Annotation requests


@dataclass
class AnnotationRequest:
    """Ordered in-context segments followed by the instruction.

    `segments` alternates image and text entries for the examples, and ends with the
    target image entry.
    """
    segments: list[dict[str, str]]
    instruction: str

    @property
    def image_segments(self) -> list[dict[str, str]]:
        return [s for s in self.segments if s["type"] == "image"]

    @property
    def target(self) -> dict[str, str]:
        return self.image_segments[-1]

    def to_json(self) -> dict[str, tp.Any]:
        return {"instruction": self.instruction, "segments": self.segments, "version": 1}

    def serialize(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def _image_segment(ref: tp.Union[str, Path], inline: bool) -> dict[str, str]:
    if inline:
        data = Path(ref).read_bytes()
        return {"type": "image", "base64": base64.b64encode(data).decode("ascii")}
    return {"type": "image", "path": str(ref)}


def build_request(
    target: tp.Union[str, Path],
    examples: tp.Sequence[tp.Tuple[tp.Union[str, Path], str]] = (),
    instruction: str = DEFAULT_INSTRUCTION,
    inline: bool = False,
) -> AnnotationRequest:
    segments = []
    for ref, ideal in examples:
        segments.append(_image_segment(ref, inline))
        segments.append({"type": "text", "text": ideal})
    segments.append(_image_segment(target, inline))
    return AnnotationRequest(segments=segments, instruction=instruction)


@dataclass
class SubjectAwarePrompt:
    has_focus: bool
    focal_description: str = ""
    peripheral_description: str = ""

    def __post_init__(self):
        if not self.has_focus and (self.focal_description or not self.peripheral_description):
            raise AnnotationParseError(
                "a prompt without focus needs an empty focal and a non-empty peripheral description"
            )
        if self.has_focus and not self.focal_description:
            raise AnnotationParseError("has_focus is set but the focal description is empty")

    def as_caption(self) -> str:
        return " ".join(t for t in (self.focal_description, self.peripheral_description) if t)

    def to_json(self) -> dict[str, tp.Any]:
        return {"has_focus": self.has_focus, "focal": self.focal_description, "peripheral": self.peripheral_description}


def parse_reply(reply: tp.Any) -> SubjectAwarePrompt:
    if not isinstance(reply, dict):
        raise AnnotationParseError(f"reply must be a JSON object, got {type(reply).__name__}")
    has_focus = reply.get("has_focus")
    if not isinstance(has_focus, bool):
        raise AnnotationParseError(f"has_focus must be a boolean, got {has_focus!r}")
    if has_focus and "focal" not in reply:
        raise AnnotationParseError("reply has has_focus=true but no focal field")
    focal = reply.get("focal", "")
    peripheral = reply.get("peripheral", "")
    if not isinstance(focal, str) or not isinstance(peripheral, str):
        raise AnnotationParseError("focal and peripheral must be strings")
    return SubjectAwarePrompt(has_focus, focal, peripheral)


class AnnotationBackend(tp.Protocol):
    async def complete(self, request: AnnotationRequest) -> tp.Any:
        ...


@dataclass
class StubBackend:
    """Answers from a SHA-256 digest of the target reference; never fails."""
    calls: int = field(default=0, compare=False)

    async def complete(self, request: AnnotationRequest) -> dict[str, tp.Any]:
        self.calls += 1
        target = request.target
        key = target.get("path") or target.get("base64", "")
        d = hashlib.sha256(key.encode()).digest()
        color, shape = COLORS[d[0] % len(COLORS)], SHAPES[d[1] % len(SHAPES)]
        background, position = BACKGROUNDS[d[2] % len(BACKGROUNDS)], POSITIONS[d[3] % len(POSITIONS)]
        if d[4] % 4:
            return {
                "has_focus": True,
                "focal": f"a {color} {shape}",
                "peripheral": f"on {background} at {position}",
            }
        return {"has_focus": False, "focal": "", "peripheral": f"{background} texture"}


@dataclass
class HttpBackend:
    endpoint: str
    timeout: float = 30.0

    async def complete(self, request: AnnotationRequest) -> tp.Any:
        timeout = aiohttp.ClientTimeout(total=self.timeout)
        try:
            async with aiohttp.ClientSession(timeout=timeout) as session:
                async with session.post(
                    self.endpoint, data=request.serialize(), headers={"Content-Type": "application/json"}
                ) as resp:
                    if resp.status != 200:
                        raise AnnotationTransportError(f"{self.endpoint} answered HTTP {resp.status}")
                    body = await resp.read()
        except (aiohttp.ClientError, asyncio.TimeoutError) as exc:
            raise AnnotationTransportError(f"{self.endpoint}: {exc!r}") from exc
        try:
            return json.loads(body)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise AnnotationParseError(f"reply from {self.endpoint} is not JSON: {exc}") from exc


def make_backend(endpoint: str, timeout: float = 30.0) -> tp.Union[StubBackend, HttpBackend]:
    if endpoint == STUB_ENDPOINT:
        return StubBackend()
    if endpoint.startswith(("http://", "https://")):
        return HttpBackend(endpoint, timeout)
    raise ValueError(f"unsupported annotation endpoint {endpoint!r}")


async def annotate(backend: AnnotationBackend, request: AnnotationRequest) -> SubjectAwarePrompt:
    """Query once, retry once on a transport failure, then surface the error."""
    try:
        reply = await backend.complete(request)
    except AnnotationTransportError as exc:
        logger.warning("annotation transport failure, retrying once: %s", exc)
        reply = await backend.complete(request)
    return parse_reply(reply)


async def annotate_many(
    backend: AnnotationBackend, requests: tp.Sequence[AnnotationRequest], limit: int = 4
) -> list[SubjectAwarePrompt]:
    """Bounded-concurrency batch annotation; results keep the input order."""
    if limit < 1:
        raise ValueError(f"concurrency limit must be >= 1, got {limit}")
    sem = asyncio.Semaphore(limit)

    async def one(req: AnnotationRequest) -> SubjectAwarePrompt:
        async with sem:
            return await annotate(backend, req)

    return list(await asyncio.gather(*(one(r) for r in requests)))
