"""Exception hierarchy shared by all modules.

The CLI maps these to exit codes: ParameterError -> 2, ImageIOError -> 3,
NumericalError -> 4.
"""


class IrnucError(Exception):
    pass


class ParameterError(IrnucError):
    """Invalid argument value or incompatible inputs."""


class ImageIOError(IrnucError):
    """Base class for image file problems."""


class UnsupportedFormatError(ImageIOError):
    """File is not an 8/16-bit single-channel PNG or binary PGM."""


class MultiChannelError(ImageIOError):
    """File decodes to more than one channel."""


class TruncatedFileError(ImageIOError):
    """File is recognized but cannot be fully decoded."""


class NumericalError(IrnucError):
    """Numerically degenerate problem (rank deficiency, vanishing weights).

    ``condition`` carries a condition-number estimate when one is available.
    """

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DegenerateBackgroundError(IrnucError):
    """Background region of an SCR spec has zero variance."""


class DegenerateFeatureError(IrnucError):
    """Feature map (or one of its rows) has zero norm."""
