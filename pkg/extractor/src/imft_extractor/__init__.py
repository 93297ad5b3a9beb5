from .extract import ExtractionManifest, extract, load_manifest, write_imft

__all__ = ["ExtractionManifest", "extract", "load_manifest", "write_imft"]
