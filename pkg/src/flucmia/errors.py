class TrainingError(RuntimeError):
    """Raised when an optimisation loop cannot continue (non-finite values, degenerate labels)."""
