"""Imputation task specifications and their text form.

A task maps an observed input modality set to a disjoint output set within
one modality family, written ``"DCE1,DCE3->DCE2"``.  Modality sets are kept
in canonical (enum) order so formatting a parsed task reproduces the
canonical string.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError, TaskParseError
from .phantom import Modality, family_of


@dataclass(frozen=True)
class TaskSpec:
    inputs: tuple
    outputs: tuple

    def __post_init__(self):
        inputs = tuple(sorted(set(self.inputs), key=int))
        outputs = tuple(sorted(set(self.outputs), key=int))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        if not inputs or not outputs:
            raise ContractError("task needs non-empty input and output sets")
        if set(inputs) & set(outputs):
            raise ContractError(f"inputs and outputs overlap: {self.label}")
        families = {family_of(m) for m in inputs + outputs}
        if len(families) != 1:
            raise ContractError(f"task mixes modality families: {self.label}")

    @property
    def family(self) -> str:
        return family_of(self.inputs[0])

    @property
    def label(self) -> str:
        left = ",".join(m.name for m in self.inputs)
        right = ",".join(m.name for m in self.outputs)
        return f"{left}->{right}"

    @property
    def file_label(self) -> str:
        """Label with filesystem-safe separators."""
        return self.label.replace(",", "+").replace("->", "_to_")


def format_task(spec: TaskSpec) -> str:
    return spec.label


def _parse_side(text: str, lo: int, hi: int, side: str):
    """Parse one comma-separated modality list; offsets index into the full
    task string so errors can point at the offending token."""
    members = []
    seen = {}
    cursor = lo
    while True:
        comma = text.find(",", cursor, hi)
        end = comma if comma != -1 else hi
        token = text[cursor:end]
        stripped = token.strip()
        pos = cursor + len(token) - len(token.lstrip())
        if not stripped:
            raise TaskParseError(
                f"empty modality name in {side} side at position {pos}", pos
            )
        try:
            modality = Modality[stripped]
        except KeyError:
            raise TaskParseError(
                f"unknown modality {stripped!r} at position {pos}", pos
            ) from None
        if modality in seen:
            raise TaskParseError(
                f"duplicate modality {stripped!r} at position {pos}", pos
            )
        seen[modality] = pos
        members.append((modality, pos))
        if comma == -1:
            break
        cursor = comma + 1
    return members


def parse_task(text: str) -> TaskSpec:
    """Parse ``"<inputs>-><outputs>"``; raises TaskParseError carrying the
    character position of the first offending token."""
    arrow = text.find("->")
    if arrow == -1:
        raise TaskParseError(f"missing '->' in task {text!r}", None)
    inputs = _parse_side(text, 0, arrow, "input")
    outputs = _parse_side(text, arrow + 2, len(text), "output")
    input_set = {m for m, _ in inputs}
    for modality, pos in outputs:
        if modality in input_set:
            raise TaskParseError(
                f"modality {modality.name} appears on both sides at position {pos}",
                pos,
            )
    first_family = family_of(inputs[0][0])
    for modality, pos in inputs + outputs:
        if family_of(modality) != first_family:
            raise TaskParseError(
                f"modality {modality.name} at position {pos} mixes families "
                f"({family_of(modality)} vs {first_family})",
                pos,
            )
    return TaskSpec(
        inputs=tuple(m for m, _ in inputs), outputs=tuple(m for m, _ in outputs)
    )


DEFAULT_TASKS = (
    TaskSpec((Modality.CT,), (Modality.CTC,)),
    TaskSpec((Modality.DCE1,), (Modality.DCE2,)),
    TaskSpec((Modality.DCE1,), (Modality.DCE2, Modality.DCE3)),
    TaskSpec((Modality.DCE1, Modality.DCE3), (Modality.DCE2,)),
)
