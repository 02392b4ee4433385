class EmptyDataError(ValueError):
    """Raised when an operation receives no examples or no usable records."""
