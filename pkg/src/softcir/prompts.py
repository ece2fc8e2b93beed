"""Prompt templates and payload assembly for every LLM-facing step.

Template bodies are fixed text with named placeholders. Each rendered
payload also carries a prompt-version string; the JSON-format footers are
part of that version, so any change to them invalidates cached responses.
All rendering is byte-deterministic (LF line endings, no timestamps).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import CaptionCountMismatch, EmptyGroup, EmptyModificationText

PROMPT_VERSION = "dual-constraint-v1+json-footer-v1"
STAGE1_QUERY_PROMPT_VERSION = "stage1-query-v1+two-line-footer-v1"
CONFIDENCE_PROMPT_VERSION = "confidence-v1+json-footer-v1"
REFINEMENT_PROMPT_VERSION = "refinement-v1"

DUAL_CONSTRAINT_TEMPLATE = """\
You are a helpful assistant for a composed image retrieval system.
You are given a reference image and a modification text that describes how the image should be changed.
Your task is to extract meaningful attribute information and generate two types of semantic queries from a reference image and a modification text.

## Step 1. Attribute Classification
Analyze the modification text in the context of the reference image and extract three types of attribute-value lists.
- "keep": A list of key attribute values that should remain unchanged in the reference image according to the modification text.
- "add": A list of attribute values that are not present in the reference image but are explicitly or implicitly required by the modification text.
- "remove": A list of attribute values that are present in the reference image but are explicitly removed by the modification text.

## Step 2. Query Generation
Using the attribute-value lists from Step 1, generate text queries that can be directly used for image retrieval.
Each query must be fluent, self-contained. If an attribute is described in relative terms, you must resolve it into a concrete absolute caption using visual clues from the reference image.
- "prescriptive_query": Write a short, specific image caption that describes the visual features that should be included in the target image, focusing on the attribute values in the "keep" and "add" lists.
- "proscriptive_query": Write a short, specific image caption that describes the reference image as it is, using positive, natural language, focusing on the attribute values in the "remove" list.

## Input:
Modification Text: "{mod_text}"
Reference image:
"""

DUAL_CONSTRAINT_FOOTER = """\

## Output Format:
Respond with a single JSON object and nothing else, using exactly these keys:
{"keep": [...], "add": [...], "remove": [...], "prescriptive_query": "...", "proscriptive_query": "..."}
Use empty lists or empty strings for categories that do not apply.
"""

STAGE1_QUERY_TEMPLATE_GENERIC = """\
You are given two pieces of input:
1. A reference image description that tells you what the original image looks like.
2. A User's Modifications text that describes how the user wants the image to be changed.

Your task is to write a two-sentence description of the image the user wants.

- The sentence1 should focus on the only User's modifications—describe the image primarily according to the User's Modifications.
- The sentence2 should preserve the elements from the reference image that do **not** conflict with the User's Modifications, describing details from the original image that can be retained.
  If there are no additional elements to preserve beyond what is stated in the User's Modifications, return an empty string.

Describe the image using only concrete, observable attributes.
Make sure both sentences are concise and consistent.

## User's Modifications
"{caption1}"
"""

STAGE1_QUERY_TEMPLATE_FASHION = """\
You are given two pieces of input:
1. A reference image description that tells you what the original product looks like.
2. A User's Modifications text that describes how the user wants the product to be changed.

Your task is to write a two-sentence description of the product the user wants.

- The sentence1 should focus on the only User's modifications—describe the product primarily according to the User's Modifications.
- The sentence2 should preserve the elements from the reference image that do **not** conflict with the User's Modifications, describing details from the original product that can be retained.

Describe the image using only concrete, observable attributes (e.g., color, shape, texture, pattern, material).
Avoid indirect or relative terms like "more," "less", "similar", or "retain". Use precise, objective language.
Make sure both sentences are concise and consistent.

## User's Modifications
1. "{caption1}"
2: "{caption2}"
"""

STAGE1_QUERY_FOOTER = """\

## Output Format:
Return exactly two lines: sentence1 on the first line and sentence2 on the second line (leave the second line empty if sentence2 is an empty string). No labels, no extra text.
"""

CONFIDENCE_TEMPLATE = """\
You are an AI assistant specialized in image analysis and candidate selection. Your task is to analyze images and select the most appropriate candidates based on given criteria.

TASK INPUT:
- reference_image_name: {ref_image_name}
- relative_captions: {relative_captions}
- candidate_images: {top_k_names}

TASK INSTRUCTIONS:
1. Analyze the reference image to understand its key visual features and context.
2. Interpret the relative captions carefully — they describe how the desired candidate image should differ from or relate to the reference image.
3. For each candidate image:
    - Evaluate how well it visually represents the *expected relationship* or *transformation* implied by combining the reference image and the relative captions.
    - Assign a confidence score between 0.0 and 1.0, reflecting how accurately the candidate image captures this intended change or relation.
"""

CONFIDENCE_FOOTER = """\

## Output Format:
Respond with a single JSON object and nothing else, mapping every candidate image name to its confidence score, for example: {"name1": 0.9, "name2": 0.4}
"""

REFINEMENT_TEMPLATE = """\
You are an expert caption-writer for composed-image retrieval across various domains.

The images above show:
1. Reference image
2. Target image
3. Comparison images (similar but incorrect)

Original captions: {original_captions}
The original captions describe how to transform the reference image into the target image, but they are not specific enough to rule out the comparison images.

Task: Write one refined caption that uniquely identifies the target image while staying faithful to the intent of the original captions.

Guidelines:
- Use the original captions as a foundation; keep their meaning while making them more specific.
- Preserve the original captions' writing tone and sentence style.
- Add concrete, observable details present in the target but absent from the comparison images.
- Be concise and output exactly one sentence.
"""


@dataclass(frozen=True)
class ImageAttachment:
    """Reference to an image shipped with a prompt, or a caption fallback.

    ``path`` attaches the image as a base64 data URL. ``caption`` is the
    text-only fallback for providers that reject image parts; using it is
    flagged in the constraint provenance.
    """

    path: Path | None = None
    caption: str | None = None

    @property
    def text_only(self) -> bool:
        return self.path is None

    def as_content_part(self) -> dict:
        if self.path is None:
            raise ValueError("text-only attachment has no image content")
        suffix = self.path.suffix.lower().lstrip(".") or "png"
        mime = {"jpg": "jpeg"}.get(suffix, suffix)
        encoded = base64.b64encode(self.path.read_bytes()).decode("ascii")
        return {
            "type": "image_url",
            "image_url": {"url": f"data:image/{mime};base64,{encoded}"},
        }


@dataclass(frozen=True)
class PromptPayload:
    """Messages ready for the chat endpoint plus identifying metadata."""

    messages: tuple[dict, ...]
    prompt_version: str
    text_only: bool = False

    @property
    def text(self) -> str:
        """Concatenated text parts, used for golden snapshots."""
        chunks = []
        for message in self.messages:
            content = message["content"]
            if isinstance(content, str):
                chunks.append(content)
            else:
                chunks.extend(p["text"] for p in content if p.get("type") == "text")
        return "".join(chunks)


def _payload(text: str, version: str, attachments: list[ImageAttachment] | None) -> PromptPayload:
    attachments = attachments or []
    image_parts = [att.as_content_part() for att in attachments if not att.text_only]
    caption_lines = [
        f"(image described as: {att.caption})" for att in attachments if att.text_only and att.caption
    ]
    if caption_lines:
        text = text + "\n".join(caption_lines) + "\n"
    content: str | list = [{"type": "text", "text": text}, *image_parts] if image_parts else text
    return PromptPayload(
        messages=({"role": "user", "content": content},),
        prompt_version=version,
        text_only=any(att.text_only for att in attachments),
    )


def build_dual_constraint_prompt(
    mod_text: str, image_ref: ImageAttachment | None = None
) -> PromptPayload:
    """Render the constraint-extraction prompt for one query.

    Deterministic: the same inputs produce byte-identical payloads.
    """
    if not mod_text or not mod_text.strip():
        raise EmptyModificationText("modification text must be non-empty")
    text = DUAL_CONSTRAINT_TEMPLATE.replace("{mod_text}", mod_text) + DUAL_CONSTRAINT_FOOTER
    return _payload(text, PROMPT_VERSION, [image_ref] if image_ref else None)


def build_stage1_query_prompt(mod_texts: list[str], domain: str) -> PromptPayload:
    """Render the two-sentence query-generation prompt.

    ``domain`` is "generic" (one caption) or "fashion" (two captions).
    """
    if domain == "generic":
        if len(mod_texts) != 1:
            raise CaptionCountMismatch(f"generic domain takes 1 caption, got {len(mod_texts)}")
        text = STAGE1_QUERY_TEMPLATE_GENERIC.replace("{caption1}", mod_texts[0])
    elif domain == "fashion":
        if len(mod_texts) != 2:
            raise CaptionCountMismatch(f"fashion domain takes 2 captions, got {len(mod_texts)}")
        text = STAGE1_QUERY_TEMPLATE_FASHION.replace("{caption1}", mod_texts[0]).replace(
            "{caption2}", mod_texts[1]
        )
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return PromptPayload(
        messages=({"role": "user", "content": text + STAGE1_QUERY_FOOTER},),
        prompt_version=STAGE1_QUERY_PROMPT_VERSION,
    )


def build_confidence_prompt(
    candidate_ids: list[str],
    reference_id: str,
    mod_texts: list[str],
    attachments: list[ImageAttachment] | None = None,
) -> PromptPayload:
    """Render the group-wise candidate-scoring prompt.

    Caption and name placeholders are rendered as JSON arrays so two runs
    are byte-identical.
    """
    if not candidate_ids:
        raise EmptyGroup("cannot score an empty candidate group")
    text = (
        CONFIDENCE_TEMPLATE.replace("{ref_image_name}", reference_id)
        .replace("{relative_captions}", json.dumps(list(mod_texts)))
        .replace("{top_k_names}", json.dumps(list(candidate_ids)))
        + CONFIDENCE_FOOTER
    )
    return _payload(text, CONFIDENCE_PROMPT_VERSION, attachments)


def build_refinement_prompt(
    original_captions: list[str],
    attachments: list[ImageAttachment] | None = None,
) -> PromptPayload:
    """Render the single-target caption refinement prompt."""
    text = REFINEMENT_TEMPLATE.replace("{original_captions}", json.dumps(list(original_captions)))
    return _payload(text, REFINEMENT_PROMPT_VERSION, attachments)
