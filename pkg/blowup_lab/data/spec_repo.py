from __future__ import annotations

import json
import re
from pathlib import Path

from pydantic import ValidationError

from blowup_lab.models.problem import ProblemSpec


class SpecError(Exception):
    def __init__(self, message: str, field_path: str = ""):
        super().__init__(message)
        self.field_path = field_path


_UNIONS = {"domain", "potential_a", "potential_V"}
_MESSAGE_PATH = re.compile(r"^Value error, ([A-Za-z_][\w.]*):")


def _dotted(loc: tuple) -> str:
    # pydantic puts the discriminator tag right after a union field; drop it
    parts: list[str] = []
    for i, p in enumerate(loc):
        if i == 1 and loc[0] in _UNIONS:
            continue
        parts.append(str(p))
    return ".".join(parts)


class SpecRepo:
    """Reads and writes JSON problem specs."""

    def parse(self, payload: dict) -> ProblemSpec:
        try:
            return ProblemSpec.model_validate(payload)
        except ValidationError as e:
            first = e.errors()[0]
            path = _dotted(first["loc"])
            if not path:
                # model-level checks name the offending field at the start of the message
                match = _MESSAGE_PATH.match(first["msg"])
                path = match.group(1) if match else ""
            raise SpecError(f"{path or '<root>'}: {first['msg']}", field_path=path) from e

    def load(self, path: Path) -> ProblemSpec:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise SpecError(f"Cannot read spec file {path}: {e}") from e
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise SpecError(f"Spec file {path} is not valid JSON: {e}") from e
        if not isinstance(payload, dict):
            raise SpecError("Spec file must hold a JSON object.")
        return self.parse(payload)

    def dumps(self, spec: ProblemSpec) -> str:
        return json.dumps(spec.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def save(self, spec: ProblemSpec, path: Path) -> None:
        Path(path).write_text(self.dumps(spec), encoding="utf-8")
