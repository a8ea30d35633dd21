import base64
import csv
import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
POOLING = "mean"

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExportManifest:
    model: str
    dataset: str
    J: int
    H: int
    pooling: str
    example_count: int
    num_classes: int
    checksum: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


@dataclass(frozen=True)
class Row:
    id: str
    text_a: str
    text_b: "str | None"
    label: int


def read_dataset(path):
    """Rows of a dataset TSV: `text` or `text_a`, optional `text_b`, `label`,
    optional `id` (defaults to the row index). Other columns are ignored."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f, delimiter="\t", quoting=csv.QUOTE_NONE)
        cols = reader.fieldnames or []
        text_a = "text" if "text" in cols else "text_a"
        if text_a not in cols or "label" not in cols:
            raise ValueError(f"{path}: header needs `text` (or `text_a`) and `label`, got {cols}")
        rows = []
        for i, r in enumerate(reader):
            rows.append(Row(
                id=r["id"].strip() if "id" in cols else str(i),
                text_a=r[text_a],
                text_b=r["text_b"] if "text_b" in cols else None,
                label=int(r["label"]),
            ))
    if not rows:
        raise ValueError(f"{path}: no rows")
    if len({r.id for r in rows}) != len(rows):
        raise ValueError(f"{path}: duplicate ids")
    return rows


def _compact(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def encode_array(vec) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


def content_checksum(J, H, num_classes, records) -> str:
    """SHA-256 over the shape and every record in id order; equal to the
    content hash the adanas teacher loader reports for the same file."""
    h = hashlib.sha256()
    for v in (J, H, num_classes):
        h.update(struct.pack("<Q", v))
    for rid, label, layers in sorted(records, key=lambda r: r[0].encode("utf-8")):
        raw = rid.encode("utf-8")
        h.update(struct.pack("<Q", len(raw)))
        h.update(raw)
        h.update(struct.pack("<Q", label))
        for layer in layers:
            h.update(np.asarray(layer, dtype="<f4").tobytes())
    return h.hexdigest()


def write_teacher(path, J, H, num_classes, records):
    """Writes `(id, label, layers)` records in the interchange format."""
    header = {
        "schema_version": SCHEMA_VERSION,
        "J": J,
        "H": H,
        "num_classes": num_classes,
        "pooling": POOLING,
        "example_count": len(records),
    }
    lines = [_compact(header)]
    for rid, label, layers in records:
        if len(layers) != J or any(len(v) != H for v in layers):
            raise ValueError(f"record `{rid}` does not have {J} layers of width {H}")
        lines.append(_compact({"id": rid, "label": label, "layers": [encode_array(v) for v in layers]}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def mean_pool(hidden, mask):
    """Mean of `hidden [B, T, H]` over positions where `mask [B, T]` is 1."""
    m = mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * m).sum(dim=1) / m.sum(dim=1).clamp(min=1.0)


def load_model(model_id):
    from transformers import AutoModel, AutoModelForSequenceClassification, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    try:
        model = AutoModelForSequenceClassification.from_pretrained(model_id)
    except (ValueError, OSError):
        model = AutoModel.from_pretrained(model_id)
    model.eval()
    return tokenizer, model


def export(model_id, dataset_path, out_path, max_len=128, batch_size=32):
    """Runs the frozen model over every row and writes the mean-pooled states
    of its encoder layers (the embedding output excluded). Writes the
    manifest beside the output as `<out>.manifest.json`."""
    import torch

    rows = read_dataset(dataset_path)
    tokenizer, model = load_model(model_id)
    num_labels = getattr(model.config, "num_labels", 2)
    num_classes = max(2, num_labels, max(r.label for r in rows) + 1)

    records = []
    overflow = 0
    with torch.no_grad():
        for start in range(0, len(rows), batch_size):
            chunk = rows[start:start + batch_size]
            a = [r.text_a for r in chunk]
            b = [r.text_b for r in chunk] if chunk[0].text_b is not None else None
            full = tokenizer(a, b, truncation=False)["input_ids"]
            overflow += sum(len(ids) > max_len for ids in full)
            enc = tokenizer(a, b, truncation=True, max_length=max_len, padding=True, return_tensors="pt")
            out = model(**enc, output_hidden_states=True)
            states = out.hidden_states[1:]
            pooled = [mean_pool(h, enc["attention_mask"]).numpy().astype("<f4") for h in states]
            for i, r in enumerate(chunk):
                records.append((r.id, r.label, [p[i] for p in pooled]))
    if overflow:
        log.warning("%d of %d examples were truncated to %d tokens", overflow, len(rows), max_len)

    J = len(records[0][2])
    H = len(records[0][2][0])
    write_teacher(out_path, J, H, num_classes, records)
    manifest = ExportManifest(
        model=str(model_id),
        dataset=str(dataset_path),
        J=J,
        H=H,
        pooling=POOLING,
        example_count=len(records),
        num_classes=num_classes,
        checksum=content_checksum(J, H, num_classes, records),
    )
    Path(str(out_path) + ".manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest
