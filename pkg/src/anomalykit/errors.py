"""Exception hierarchy shared across the toolkit."""


class AnomalykitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(AnomalykitError):
    """A manifest or artifact file could not be parsed."""


class ValidationError(AnomalykitError):
    """A record violates a structural invariant."""


class EmptyPool(AnomalykitError):
    """An asset pool required by the operation is empty."""


class InsufficientRoles(AnomalykitError):
    """Fewer roles available than agents requested."""


class SchemaError(AnomalykitError):
    """A model completion did not match the expected labeled-field schema."""


class TransportError(AnomalykitError):
    """A provider backend failed at the transport level."""


class BudgetExceeded(AnomalykitError):
    """Provider call-count cap reached."""


class ReplayMiss(AnomalykitError):
    """No recorded response for this request digest."""


class UnresolvedItem(AnomalykitError):
    """A referenced object cannot be resolved to a scene instance or asset."""


class PlacementExhausted(AnomalykitError):
    """Rejection sampling failed to place an instance within the attempt cap."""


class VolumeOverflow(AnomalykitError):
    """Combined target volume exceeds the workspace budget."""


class PlanNotFound(AnomalykitError):
    """Motion planner exhausted its iteration cap without reaching the goal."""


class ContactFailure(AnomalykitError):
    """Gripper advanced past the maximum travel without making contact."""


class LeakageError(AnomalykitError):
    """Ground-truth task text leaked into a scene description."""


class UnbalancedMass(AnomalykitError):
    """Source and sink distributions carry different total mass."""


class DegenerateInput(AnomalykitError):
    """A distribution has empty support."""
