"""Versioned prompt assets.

Judge behaviour is extremely sensitive to prompt wording, so the prompt
templates live as plain-text package data and are pinned by SHA-256.  Any
edit to an asset must be deliberate: the pinned digest has to be updated in
the same change, otherwise loading fails loudly instead of silently running
an evaluation with drifted instructions.
"""

from __future__ import annotations

import hashlib
import logging
from importlib import resources

logger = logging.getLogger(__name__)

# Pinned digests of the shipped templates.  Keys are file names under the
# ``webeval.prompts`` package.
PROMPT_HASHES: dict[str, str] = {
    "interaction_driving.txt": "07545a30bdc9c9fb3a5198c5e2162a757ab7fe36dde571c51c72af4a98b7cef7",
    "static_scoring.txt": "f371a52f63d845becb2dea54a3882af1ad69f593139da4b06a8953008591363f",
    "problem_detection.txt": "5dca085192f1b9ae3a4d1b55dc91a1dd6425f9dfa59c9bcc4d3f8bf0544d27ef",
    "score_adjustment.txt": "0b9c646af82731f170b60096291e7a0700510630211ad40f77d534a3c7c83e86",
}


class AssetError(Exception):
    """Raised when a prompt asset is missing or fails its integrity check."""


def _read_asset(name: str) -> str:
    ref = resources.files("webeval.prompts").joinpath(name)
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise AssetError(f"prompt asset not found: {name}") from exc


def load_asset(name: str) -> str:
    """Return the text of a pinned prompt asset, verifying its digest."""
    if name not in PROMPT_HASHES:
        raise AssetError(f"unknown prompt asset: {name!r}")
    text = _read_asset(name)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    expected = PROMPT_HASHES[name]
    if digest != expected:
        raise AssetError(
            f"prompt asset {name!r} failed integrity check: "
            f"expected sha256 {expected}, got {digest}"
        )
    return text


def fill_template(template: str, values: dict[str, str]) -> str:
    """Substitute ``{name}`` placeholders by literal replacement.

    The templates contain literal JSON braces in their output-format
    sections, so ``str.format`` is unusable.  Every provided placeholder
    must occur in the template at least once; a missing one means the
    template and the call site have drifted apart.
    """
    filled = template
    for key, value in values.items():
        token = "{" + key + "}"
        if token not in filled:
            raise AssetError(f"template has no placeholder {token}")
        filled = filled.replace(token, value)
    return filled


def verify_assets() -> dict[str, str]:
    """Check every pinned asset and return ``{name: digest}`` on success."""
    verified: dict[str, str] = {}
    for name in sorted(PROMPT_HASHES):
        load_asset(name)
        verified[name] = PROMPT_HASHES[name]
    logger.debug("verified %d prompt assets", len(verified))
    return verified
