"""Exception hierarchy shared by all beamlab modules."""


class BeamlabError(Exception):
    """Base class for every error raised by beamlab."""


class DegenerateMetricError(BeamlabError):
    pass


class IntegrationError(BeamlabError):
    """A flow step produced a non-finite state."""


class TrappedRayError(BeamlabError):
    pass


class ChartError(BeamlabError):
    """Parallel frame degenerated; retry with a smaller step."""


class RiccatiBlowupError(BeamlabError):
    """Im M lost positive definiteness."""


class SingularYError(BeamlabError):
    pass


class BranchError(BeamlabError):
    """sqrt(det Y) branch could not be tracked continuously."""


class ResolutionError(BeamlabError):
    """Quadrature grid does not resolve the sqrt(h) beam scale."""


class PreconditionError(BeamlabError):
    pass


class ParameterError(BeamlabError):
    pass


class CFLError(BeamlabError):
    pass


class BlowupError(BeamlabError):
    def __init__(self, step, message=None):
        super().__init__(message or f"non-finite wave field at step {step}")
        self.step = step


class ConfigError(BeamlabError):
    pass
