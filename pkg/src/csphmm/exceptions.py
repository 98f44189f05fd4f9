"""Exception types raised across the toolkit."""


class CsphmmError(Exception):
    """Base class for all errors raised by this package."""


# corpus / manifest


class ManifestError(CsphmmError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MissingField(ManifestError):
    pass


class BadEnumValue(ManifestError):
    pass


class DuplicateRecord(ManifestError):
    pass


class UnreadableFile(ManifestError):
    pass


class SpeakerMissingTrainData(CsphmmError):
    pass


class TooFewRecords(CsphmmError, ValueError):
    pass


class FeatureFileError(CsphmmError, ValueError):
    pass


# front end


class TooShort(CsphmmError, ValueError):
    pass


class WavFormatError(CsphmmError, ValueError):
    pass


# models


class DimensionMismatch(CsphmmError, ValueError):
    pass


class NoValidPath(CsphmmError):
    pass


class EmptyDataset(CsphmmError, ValueError):
    pass


class BadOrder(CsphmmError, ValueError):
    pass


class TooLarge(CsphmmError, ValueError):
    pass


class ModelFormatError(CsphmmError, ValueError):
    pass


class EmptyTrack(CsphmmError, ValueError):
    pass


class EmptyTrainingSet(CsphmmError, ValueError):
    pass


class EmptyRegistry(CsphmmError, ValueError):
    pass


class TooFewFrames(CsphmmError, ValueError):
    pass


# evaluation


class UnenrolledSpeaker(CsphmmError):
    pass


class SizeMismatch(CsphmmError, ValueError):
    pass


class TooFew(CsphmmError, ValueError):
    pass
