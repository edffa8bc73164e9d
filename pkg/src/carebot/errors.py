"""Domain error types, grouped by the subsystem that raises them.

Everything inherits CarebotError so service boundaries (HTTP layer, CLI)
can catch broadly and map to status/exit codes.
"""


class CarebotError(Exception):
    """Base class for all domain errors."""


# --- intent catalog ---------------------------------------------------------

class DuplicateIntent(CarebotError):
    """An intent with the same (case-folded) name already exists."""


class UnknownIntent(CarebotError):
    """The named intent is not in the catalog."""


class UnknownSlot(CarebotError):
    """The named slot does not exist on the intent."""


class UnknownTask(CarebotError):
    """The named task is not registered with the task runtime."""


class NoBinding(CarebotError):
    """No task is bound to the intent."""


class CorruptCatalog(CarebotError):
    """A catalog document failed to parse or violated an invariant."""


class IoFailure(CarebotError):
    """Reading or writing a file failed."""


# --- context store ----------------------------------------------------------

class UnknownSession(CarebotError):
    """The session id does not exist."""


# --- language processor -----------------------------------------------------

class MissingPlaceholder(CarebotError):
    """A template placeholder was not bound at render time."""


class MalformedCompletion(CarebotError):
    """The completion contained no usable JSON envelope."""


class BackendFailure(CarebotError):
    """The completion backend failed (network, protocol, or internal error)."""


class BackendUnavailable(CarebotError):
    """The requested backend is not configured or not known."""


# --- task runtime -----------------------------------------------------------

class DuplicateTask(CarebotError):
    """A task with the same name is already registered."""


class InvalidDef(CarebotError):
    """A task definition violated its structural invariants."""


class IllegalTransition(CarebotError):
    """The machine attempted a transition absent from its definition."""


class CatalogMutationFailed(CarebotError):
    """Applying a learned addition to the catalog failed."""


# --- world simulator --------------------------------------------------------

class IllegalAction(CarebotError):
    """The action's preconditions do not hold in the current world state."""


class UnknownItem(CarebotError):
    """The item is not part of the world configuration."""


class InvalidConfig(CarebotError):
    """A configuration file failed validation."""


# --- gateway / cli ----------------------------------------------------------

class ActorNotAllowed(CarebotError):
    """This actor may not speak in the session's current mode or state."""


class InvalidScript(CarebotError):
    """A scenario script failed to parse or validate."""


class CorruptLog(CarebotError):
    """An exported event log line failed to parse."""
