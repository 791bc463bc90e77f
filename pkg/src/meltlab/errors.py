"""Exception types shared across the package."""


class MeltlabError(Exception):
    """Base class for all errors raised by meltlab."""


class UnstableTrap(MeltlabError):
    """Secular motion is unstable: a Mathieu radicand a + q^2/2 is not positive."""


class NoSolution(MeltlabError):
    """A root-find over trap voltages has no solution in the allowed span."""


class CoincidentIons(MeltlabError):
    """Two ions are closer than the minimum resolvable separation."""


class NotConverged(MeltlabError):
    """A Monte Carlo minimization exceeded its move budget before settling."""


class DegenerateShell(MeltlabError):
    """Shell geometry is degenerate (collinear ions, no ellipse through them)."""


class FitFailed(MeltlabError):
    """A least-squares model fit left residuals above the acceptance threshold."""


class FrameOverflow(MeltlabError):
    """A requested ellipse does not fit inside the image frame."""


class NoRing(MeltlabError):
    """Ring search found nothing distinguishable from the image background."""


class ShapeMismatch(MeltlabError):
    """Two images that must share a shape do not."""


class EmptyDensity(MeltlabError):
    """An angular density with no weight cannot be analyzed."""


class PlacementFailed(MeltlabError):
    """An impurity ion relaxed into a different shell than requested."""
