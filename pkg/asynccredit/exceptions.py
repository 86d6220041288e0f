'''Error types raised across asynccredit.

Each class extends the builtin exception the situation would otherwise raise,
so callers catching ValueError / KeyError / RuntimeError keep working.
'''

class AsyncCreditError(Exception):
    '''Base class for all package errors'''

class DimensionError(AsyncCreditError, ValueError):
    '''Tensor shapes do not agree'''

class ContractError(AsyncCreditError, ValueError):
    '''A caller broke an operation's precondition'''

class ConfigError(AsyncCreditError, KeyError):
    '''Unknown configuration key, invalid value, or missing config file'''
    def __str__(self):
        # KeyError quotes its argument; keep the message readable
        return(str(self.args[0]) if self.args else '')

class BudgetExceededError(AsyncCreditError, RuntimeError):
    '''An exhaustive enumeration would exceed its budget'''
    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count

class NonFiniteError(AsyncCreditError, FloatingPointError):
    '''NaN or infinite value in a gradient or a loss'''
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path

class ConvergenceError(AsyncCreditError, RuntimeError):
    '''An iterative oracle did not reach its tolerance within the iteration cap'''

class CheckpointError(AsyncCreditError, IOError):
    '''Malformed or missing checkpoint file'''

class UsageError(AsyncCreditError, ValueError):
    '''Malformed command line'''
