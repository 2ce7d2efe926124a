"""Spreadsheet-style option letter labels: A..Z, AA, AB, ..."""

from __future__ import annotations


def index_to_label(index: int) -> str:
    """Map 0 -> A, 25 -> Z, 26 -> AA, 27 -> AB, and so on."""
    if index < 0:
        raise ValueError(f"label index must be >= 0, got {index}")
    label = ""
    i = index
    while True:
        i, rem = divmod(i, 26)
        label = chr(ord("A") + rem) + label
        if i == 0:
            break
        i -= 1
    return label


def label_to_index(label: str) -> int:
    """Inverse of :func:`index_to_label`."""
    if not label or not all("A" <= ch <= "Z" for ch in label):
        raise ValueError(f"label must be non-empty uppercase A-Z, got {label!r}")
    index = 0
    for ch in label:
        index = index * 26 + (ord(ch) - ord("A") + 1)
    return index - 1


def option_labels(num_options: int) -> list[str]:
    if num_options < 1:
        raise ValueError("need at least one option")
    return [index_to_label(i) for i in range(num_options)]
