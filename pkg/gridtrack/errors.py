'''
Exception hierarchy shared by every gridtrack module.
'''


class GridTrackError(RuntimeError):
    pass


class ValidationError(GridTrackError, ValueError):
    pass


class CaseError(ValidationError):
    pass


class ScenarioError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class SolverError(GridTrackError):
    pass


class NotInteriorError(SolverError):
    pass


class SingularSystemError(SolverError):

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class MaxIterationsError(SolverError):

    def __init__(self, message, state=None, kkt_error=None):
        super().__init__(message)
        self.state = state
        self.kkt_error = kkt_error


class ProtocolError(GridTrackError):
    pass
