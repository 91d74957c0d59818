from .settings import BaseConfig, EngineConfig, read_sections

__all__ = ["BaseConfig", "EngineConfig", "read_sections"]
