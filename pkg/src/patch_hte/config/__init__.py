from .settings import (
    AnalysisToggles,
    BinningSpec,
    FilterSettings,
    InputPaths,
    RunConfig,
    TreeConfig,
    get_settings,
)

__all__ = [
    "AnalysisToggles",
    "BinningSpec",
    "FilterSettings",
    "InputPaths",
    "RunConfig",
    "TreeConfig",
    "get_settings",
]
