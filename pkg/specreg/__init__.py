from importlib import metadata

try:
    __version__ = metadata.version("specreg")
except metadata.PackageNotFoundError:
    __version__ = "UNKNOWN"
