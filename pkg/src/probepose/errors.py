"""Exception types. The CLI reports ``type(err).__name__`` on failure."""


class ProbePoseError(Exception):
    pass


class SingularHomography(ProbePoseError):
    pass


class InvalidSpec(ProbePoseError):
    pass


class BehindCamera(ProbePoseError):
    pass


class DegeneratePlane(ProbePoseError):
    pass


class DegeneratePose(ProbePoseError):
    pass


class TooFewFeatures(ProbePoseError):
    pass


class NoMatches(ProbePoseError):
    pass


class EstimationFailed(ProbePoseError):
    pass


class RestorationFailed(ProbePoseError):
    pass


class DecompositionFailed(ProbePoseError):
    pass


class DegenerateConfiguration(ProbePoseError):
    pass


class SessionFailed(ProbePoseError):
    pass


class NotConverged(ProbePoseError):
    pass


class NoEstimate(ProbePoseError):
    pass


class DegenerateSet(ProbePoseError):
    pass


class NonConvergence(ProbePoseError):
    pass


class UnknownKind(ProbePoseError):
    pass


class EmptyInput(ProbePoseError):
    pass


class EmptyVolume(ProbePoseError):
    pass


class PitchMismatch(ProbePoseError):
    pass
