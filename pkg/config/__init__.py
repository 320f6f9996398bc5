import importlib
import os
from types import ModuleType

os.environ.setdefault("LANDAU_SETTINGS_MODULE", "config.settings.local")


class _LazySettings:
    """Resolves the settings module named by LANDAU_SETTINGS_MODULE on first access."""

    _wrapped: ModuleType | None = None

    def _setup(self) -> None:
        self._wrapped = importlib.import_module(os.environ["LANDAU_SETTINGS_MODULE"])
        # Importing config.settings.* binds the subpackage over this name; restore it.
        globals()["settings"] = self

    def __getattr__(self, name: str):
        if self._wrapped is None:
            self._setup()
        return getattr(self._wrapped, name)


settings = _LazySettings()

__all__ = ("settings",)
