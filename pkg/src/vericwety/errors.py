"""Exception types shared across the pipeline."""


class VeriCwetyError(Exception):
    """Base class for all pipeline errors."""


# --- corpus ---

class CorpusError(VeriCwetyError):
    pass


class EmptyCorpus(CorpusError):
    """No Verilog module found anywhere under the corpus root."""


class ChecksumMismatch(CorpusError):
    """A manifest entry no longer matches the file contents on disk."""


# --- labeling ---

class ProviderTimeout(VeriCwetyError):
    pass


class MalformedResponse(VeriCwetyError):
    pass


class AuthError(VeriCwetyError):
    """Provider rejected credentials; aborts the batch instead of abstaining."""


class MixedDesign(VeriCwetyError):
    """Verdicts passed to a vote reference more than one design."""


class MissingVotes(VeriCwetyError):
    def __init__(self, design_ids):
        self.design_ids = sorted(design_ids)
        super().__init__("no votes for designs: %s" % ", ".join(self.design_ids))


# --- embeddings / store ---

class BackendUnavailable(VeriCwetyError):
    pass


class DimensionMismatch(VeriCwetyError):
    pass


class DesignMismatch(VeriCwetyError):
    pass


class StoreError(VeriCwetyError):
    pass


class KeyMissing(StoreError):
    pass


class BackendMismatch(StoreError):
    """Store on disk was created with a different backend id or dimension."""


# --- classifier ---

class TooFewExamples(VeriCwetyError):
    pass


class DegenerateLabels(VeriCwetyError):
    """Dataset contains a single class where two or more are required."""


class MissingEmbeddings(VeriCwetyError):
    pass


# --- evaluation ---

class LengthMismatch(VeriCwetyError):
    pass


class UnknownLabel(VeriCwetyError):
    pass


# --- cli ---

class ArtifactMissing(VeriCwetyError):
    """A command prerequisite (labels, store, model, ...) is not on disk."""
