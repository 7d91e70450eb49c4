"""Anonymous patient profiles and the on-disk store.

One directory per nickname holds profile.json plus that patient's session
files. Profiles are anonymous by construction: the schema has no fields
for personal data, and nicknames are restricted to a short slug so real
names do not fit the pattern comfortably. The nickname-to-identity mapping
lives with the therapists, outside this system.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional

from .analytics import SessionStats, compute_stats
from .engine import GameConfig, Mechanic
from .recorder import read_session

NICKNAME_RE = re.compile(r"^[a-z0-9_-]{2,24}$")
PROFILE_VERSION = 1
SESSION_SUFFIX = ".session.jsonl"


class ProfileError(ValueError):
    pass


class InvalidNickname(ProfileError):
    pass


class DuplicateNickname(ProfileError):
    pass


class UnknownNickname(ProfileError):
    pass


class UnknownSession(ProfileError):
    pass


class InvalidMergedConfig(ProfileError):
    pass


def load_defaults() -> dict:
    with resources.files("pillowgrid").joinpath("defaults.json").open(encoding="utf-8") as f:
        return json.load(f)


def default_config(mechanic: Mechanic) -> GameConfig:
    return GameConfig.from_dict(load_defaults()[mechanic.value])


@dataclass
class PatientProfile:
    nickname: str
    created_at: str
    notes: str = ""
    overrides: dict[str, dict] = field(default_factory=dict)  # mechanic -> field deltas

    def to_dict(self) -> dict:
        return {
            "format_version": PROFILE_VERSION,
            "nickname": self.nickname,
            "created_at": self.created_at,
            "notes": self.notes,
            "overrides": self.overrides,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PatientProfile":
        return cls(
            nickname=obj["nickname"],
            created_at=obj["created_at"],
            notes=obj.get("notes", ""),
            overrides=obj.get("overrides", {}),
        )


@dataclass(frozen=True)
class SessionRef:
    session_id: str
    nickname: str
    started_at: str
    path: Path
    stats: SessionStats
    footer_missing: bool = False


def merge_config(base: dict, overrides: dict) -> GameConfig:
    """Overlay override fields onto a config dict and re-validate."""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    try:
        return GameConfig.from_dict(merged)
    except (ValueError, KeyError) as exc:
        raise InvalidMergedConfig(str(exc)) from exc


def session_id_for(nickname: str, stamp: str) -> str:
    # "~" is outside the nickname alphabet, so the id splits unambiguously.
    return f"{nickname}~{stamp}"


def compact_stamp(now: Optional[datetime] = None) -> str:
    now = now or datetime.now(timezone.utc)
    return now.strftime("%Y%m%dT%H%M%S%f") + "Z"


class ProfileStore:
    """File-backed profile and session index rooted at one directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- profiles ----------------------------------------------------------

    def _profile_path(self, nickname: str) -> Path:
        return self.root / nickname / "profile.json"

    def create_profile(self, nickname: str, notes: str = "") -> PatientProfile:
        if not NICKNAME_RE.match(nickname or ""):
            raise InvalidNickname(
                f"nickname must match {NICKNAME_RE.pattern}, got {nickname!r}"
            )
        path = self._profile_path(nickname)
        if path.exists():
            raise DuplicateNickname(nickname)
        profile = PatientProfile(
            nickname=nickname,
            created_at=datetime.now(timezone.utc).isoformat(),
            notes=notes,
        )
        self._save(profile)
        return profile

    def get_profile(self, nickname: str) -> PatientProfile:
        path = self._profile_path(nickname)
        if not path.exists():
            raise UnknownNickname(nickname)
        with open(path, encoding="utf-8") as f:
            return PatientProfile.from_dict(json.load(f))

    def list_profiles(self) -> list[PatientProfile]:
        out = []
        for p in sorted(self.root.glob("*/profile.json")):
            with open(p, encoding="utf-8") as f:
                out.append(PatientProfile.from_dict(json.load(f)))
        return out

    def set_overrides(self, nickname: str, mechanic: Mechanic, overrides: dict) -> GameConfig:
        """Replace a profile's per-mechanic overrides after validating the merge."""
        profile = self.get_profile(nickname)
        merged = merge_config(load_defaults()[mechanic.value], overrides)
        profile.overrides[mechanic.value] = overrides
        self._save(profile)
        return merged

    def set_notes(self, nickname: str, notes: str) -> PatientProfile:
        profile = self.get_profile(nickname)
        profile.notes = notes
        self._save(profile)
        return profile

    def effective_config(self, nickname: str, mechanic: Mechanic, **extra) -> GameConfig:
        """System defaults overlaid with the profile's overrides (then `extra`)."""
        profile = self.get_profile(nickname)
        overrides = dict(profile.overrides.get(mechanic.value, {}))
        overrides.update({k: v for k, v in extra.items() if v is not None})
        return merge_config(load_defaults()[mechanic.value], overrides)

    def _save(self, profile: PatientProfile) -> None:
        path = self._profile_path(profile.nickname)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(profile.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    # -- sessions ----------------------------------------------------------

    def new_session_path(self, nickname: str, stamp: Optional[str] = None) -> tuple[str, Path]:
        self.get_profile(nickname)  # must exist
        stamp = stamp or compact_stamp()
        return session_id_for(nickname, stamp), self.root / nickname / f"{stamp}{SESSION_SUFFIX}"

    def session_path(self, session_id: str) -> Path:
        nickname, _, stamp = session_id.partition("~")
        path = self.root / nickname / f"{stamp}{SESSION_SUFFIX}"
        if not path.exists():
            raise UnknownSession(session_id)
        return path

    def list_sessions(self, nickname: str) -> list[SessionRef]:
        """Chronological session index with stats from footers.

        Footerless sessions (crashes) are included with recomputed stats.
        """
        self.get_profile(nickname)
        refs = []
        for path in sorted((self.root / nickname).glob(f"*{SESSION_SUFFIX}")):
            log = read_session(path, tolerant=True)
            if log.footer is not None:
                stats = SessionStats.from_dict(log.footer.summary)
                missing = False
            else:
                stats = compute_stats(log)
                missing = True
            stamp = path.name[: -len(SESSION_SUFFIX)]
            refs.append(
                SessionRef(
                    session_id=session_id_for(nickname, stamp),
                    nickname=nickname,
                    started_at=log.header.started_at,
                    path=path,
                    stats=stats,
                    footer_missing=missing,
                )
            )
        refs.sort(key=lambda r: r.started_at)
        return refs
