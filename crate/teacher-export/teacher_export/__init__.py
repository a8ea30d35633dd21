"""Exports a frozen transformer's per-layer pooled states as an adanas teacher file."""

from .export import ExportManifest, content_checksum, export, read_dataset, write_teacher

__all__ = ["ExportManifest", "content_checksum", "export", "read_dataset", "write_teacher"]
