from . import anatomy
from . import losses
from . import metrics
from . import solver
