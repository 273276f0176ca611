"""Typed errors raised across the toolkit.

Every error carries a human-readable message; callers that need to branch
should catch the specific class, not parse messages.
"""


class GmaBenchError(Exception):
    """Base class for all toolkit errors."""


# --- keypoint parsing ---------------------------------------------------


class MalformedDocument(GmaBenchError):
    """A pose frame document cannot be mapped onto the 25-keypoint layout."""


class FrameCountMismatch(GmaBenchError):
    """A snippet does not contain exactly the expected number of frames."""


# --- blur pipeline ------------------------------------------------------


class NoValidHeadDetection(GmaBenchError):
    """No frame in the snippet passed the reliability gate."""


class DimensionMismatch(GmaBenchError):
    """Frame pixel dimensions disagree with the snippet metadata."""


# --- feature preparation ------------------------------------------------


class DegenerateSnippet(GmaBenchError):
    """Too many selected keypoint series are entirely missing."""


# --- neural network -----------------------------------------------------


class ShapeMismatch(GmaBenchError):
    """Input tensor shape is inconsistent with the network layout."""


class SingleClassDataset(GmaBenchError):
    """Training requires samples from both classes."""


class VersionMismatch(GmaBenchError):
    """A serialized weight blob has an unknown magic or version."""


class ChecksumFailure(GmaBenchError):
    """A serialized weight blob failed its integrity check."""


# --- evaluation ---------------------------------------------------------


class TooFewSamples(GmaBenchError):
    """Not enough samples to build the requested fold plan."""


# --- agreement ----------------------------------------------------------


class DegenerateMarginals(GmaBenchError):
    """Chance agreement is 1 with imperfect observed agreement."""


class EmptyOverlap(GmaBenchError):
    """No snippet survives pairwise assessability filtering."""


# --- study service ------------------------------------------------------


class PoolTooSmall(GmaBenchError):
    """The snippet pool cannot cover the requested subsets."""


class UnknownStudy(GmaBenchError):
    """No study with the given identifier exists."""


class UnknownSession(GmaBenchError):
    """No session with the given identifier exists."""


class OutOfOrder(GmaBenchError):
    """A label was submitted for a snippet other than the cursor item."""


class AlreadyLabelled(GmaBenchError):
    """The snippet already has a label in this session."""


class InvalidLabel(GmaBenchError):
    """The submitted label is not one of the allowed values."""


class JournalCorrupt(GmaBenchError):
    """The event journal contains invalid records before its tail."""
