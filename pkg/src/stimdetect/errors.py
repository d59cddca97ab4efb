"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class StimDetectError(Exception):
    """Base class; ``code`` is the machine-readable error name used by the CLI."""

    code = "error"

    def to_record(self) -> dict:
        return {"error": self.code, "message": str(self)}


# annotations
class MalformedXml(StimDetectError):
    code = "malformed_xml"


class SchemaViolation(StimDetectError):
    code = "schema_violation"


class IntervalOutOfRange(StimDetectError):
    code = "interval_out_of_range"


class MissingVideoFile(StimDetectError):
    code = "missing_video_file"

    def __init__(self, video_id: str):
        super().__init__(f"no video path for id {video_id!r}")
        self.video_id = video_id


# preprocess
class UndecodableVideo(StimDetectError):
    code = "undecodable_video"


class EmptyVideo(StimDetectError):
    code = "empty_video"


class EstimatorFailure(StimDetectError):
    code = "estimator_failure"

    def __init__(self, frame_index: int, cause: BaseException | str):
        super().__init__(f"pose estimator failed on frame {frame_index}: {cause}")
        self.frame_index = frame_index


# prefetch / models
class DegenerateCrop(StimDetectError):
    code = "degenerate_crop"


class ShapeMismatch(StimDetectError, ValueError):
    code = "shape_mismatch"


class BackboneUnavailable(StimDetectError):
    code = "backbone_unavailable"


# training
class DivergedImmediately(StimDetectError):
    code = "diverged_immediately"


class EmptySplit(StimDetectError):
    code = "empty_split"


class NonFiniteLoss(StimDetectError):
    code = "non_finite_loss"

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# evaluation
class LengthMismatch(StimDetectError, ValueError):
    code = "length_mismatch"


class EmptyInput(StimDetectError, ValueError):
    code = "empty_input"


class ComponentNotLoaded(StimDetectError):
    code = "component_not_loaded"
