# every error the pipeline raises on bad input or a numerically hopeless situation.
# cli.main() turns any ClvError into exit code 1.


class ClvError(Exception):
    pass


class EmptyCalibration(ClvError):
    def __init__(self, what='calibration records'):
        super().__init__('no {} to estimate from'.format(what))


class InvalidRecord(ClvError):
    def __init__(self, row, reason='churn flag must be 0 or 1'):
        self.row = row
        super().__init__('invalid record at row {}: {}'.format(row, reason))


class NotMonotone(ClvError):
    def __init__(self, index):
        self.index = index
        super().__init__('survival curve increases at index {}'.format(index))


class InvalidSurvival(ClvError):
    def __init__(self, index, value):
        self.index = index
        super().__init__('survival value {} at index {} is outside [0, 1]'.format(value, index))


class InvalidHazard(ClvError):
    def __init__(self, index, value):
        self.index = index
        super().__init__('hazard {} at index {} is outside [0, 1]'.format(value, index))


class InsufficientData(ClvError):
    pass


class EmptyTail(ClvError):
    def __init__(self, tail_start):
        self.tail_start = tail_start
        super().__init__('no exposure at or beyond tenure {}'.format(tail_start))


class TailNotSet(ClvError):
    def __init__(self):
        super().__init__('baseline has no tail; run extrapolate_tail first')


class DegenerateBaseline(ClvError):
    def __init__(self, tenure, customer_id=None):
        self.tenure = tenure
        self.customer_id = customer_id
        msg = 'baseline hazard is 0 at tenure {}'.format(tenure)
        if customer_id is not None:
            msg += ' (customer {})'.format(customer_id)
        super().__init__(msg)


class MarginSeriesTooShort(ClvError):
    def __init__(self, needed, got):
        self.needed = needed
        self.got = got
        super().__init__('margin series has {} periods, projection needs {}'.format(got, needed))


class InvalidRate(ClvError):
    def __init__(self, rate):
        self.rate = rate
        super().__init__('discount rate must be a finite value >= 0, got {}'.format(rate))


class FitDiverged(ClvError):
    def __init__(self, reason, beta, iterations):
        self.beta = beta
        self.iterations = iterations
        super().__init__('odds model fit diverged after {} iterations: {}'.format(iterations, reason))


class OffsetUndefined(ClvError):
    def __init__(self, tenure, hazard):
        self.tenure = tenure
        super().__init__('baseline hazard {} at tenure {} has no finite log-odds'.format(hazard, tenure))


class MissingColumn(ClvError):
    def __init__(self, name, path=None):
        self.name = name
        self.path = path
        super().__init__('missing column {!r}{}'.format(name, '' if path is None else ' in {}'.format(path)))


class UnexpectedColumn(ClvError):
    def __init__(self, name, path=None):
        self.name = name
        self.path = path
        super().__init__('unexpected column {!r}{}'.format(name, '' if path is None else ' in {}'.format(path)))


class InvalidValue(ClvError):
    def __init__(self, row, column, value=None, reason=None):
        self.row = row
        self.column = column
        self.value = value
        msg = 'invalid value {!r} at row {}, column {!r}'.format(value, row, column)
        if reason:
            msg += ': {}'.format(reason)
        super().__init__(msg)


class DuplicateCustomerId(ClvError):
    def __init__(self, customer_id, row=None):
        self.customer_id = customer_id
        self.row = row
        super().__init__('duplicate customer_id {!r} at row {}'.format(customer_id, row))


class BaselineMismatch(ClvError):
    pass


class UnsupportedVersion(ClvError):
    def __init__(self, version, what):
        self.version = version
        super().__init__('unsupported {} version {!r}'.format(what, version))


class InvalidSpec(ClvError):
    pass
