"""CNN detector over exported trace images.

Consumes the image tree written by `imago export-images` (PGM folders named
1..levels plus manifest.json), trains a small convolutional classifier over
the level folders, and writes an `id,xi_hat` predictions CSV that the
primary evaluator ingests via `imago import-predictions`.
"""

__version__ = "0.1.0"


class TrainerError(Exception):
    """Bad inputs or images; the CLI maps this to exit code 2."""
