"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class DnnFaultError(Exception):
    """Base class for all errors raised by dnnfault."""


class ShapeError(DnnFaultError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(DnnFaultError, ValueError):
    """A precondition on an argument was violated (empty tensor, bad config...)."""


class ProtocolError(DnnFaultError, RuntimeError):
    """An API was called out of order (backward before forward, double capture...)."""


class ConfigurationError(ContractError):
    """A monitor or run was configured in a way that cannot work."""


class DatasetError(DnnFaultError, ValueError):
    """A dataset could not be loaded or parsed."""


class SpecError(DnnFaultError, ValueError):
    """A model spec document is invalid.

    ``pointer`` is a JSON pointer (RFC 6901) to the offending field.
    """

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
        self.reason = message


class SchemaError(SpecError):
    """The document does not match the model-spec schema."""


class ShapeInconsistencyError(SpecError):
    """Layers declared in the document cannot be chained."""


class UnsupportedLayerError(SpecError):
    """The document asks for a layer type the engine does not provide."""


class MutationError(DnnFaultError, ValueError):
    """A mutation cannot be applied to the given spec."""
