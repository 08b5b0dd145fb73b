from .collocation import *
from .config import *
from .errors import *
from .fem import *
from .mesh import *
from .metamodel import *
from .pipeline import *
from .quantiles import *
from .randomfield import *
from .rbf import *
from .sampling import *
from .screening import *
from .svd import *
from .writers import *

# a shared context so library users get solve caching and a solve budget without setting one up
_context = SimulationContext()
solve = _context.solve
solve_many = _context.solve_many
