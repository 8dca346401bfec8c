from . import utils
from . import grid
from . import diffops
from . import io
from . import models
from . import datasets
