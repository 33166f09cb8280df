class StageError(RuntimeError):
    """Failure of one benchmark stage; ``exit_code`` is what the CLI returns."""

    EXIT_CODES = {
        "config": 10,
        "manifest": 11,
        "model": 12,
        "evaluate": 13,
        "paired": 14,
        "wcam": 15,
        "augment": 16,
        "report": 17,
        "scatter": 18,
        "replay": 19,
    }

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = self.EXIT_CODES.get(stage, 1)
