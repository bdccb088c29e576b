import logging
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from errors import DuplicateCustomerId, InvalidSpec, InvalidValue, MissingColumn, UnexpectedColumn

CHUNKSIZE = 2000
FLOAT_FORMAT = '%.6f'
MODES = ('single', 'competing')

CALIBRATION_COLUMNS = ['customer_id', 'tenure', 'churned']
HISTORY_COLUMNS = ['customer_id', 'duration', 'churned']
SCORING_COLUMNS = {
    'single': ['customer_id', 'tenure', 'churn_score', 'margin'],
    'competing': ['customer_id', 'tenure', 'score_v', 'score_inv', 'margin'],
    'odds': ['customer_id', 'tenure', 'margin'],
}
PROJECTION_COLUMNS = ['customer_id', 'alpha', 'ert_months', 'clv', 'truncated_at']
COMPETING_PROJECTION_COLUMNS = ['customer_id', 'alpha_v', 'alpha_inv', 'ert_months', 'clv', 'truncated_at']
CAUSES = ('V', 'I')


@dataclass(frozen=True)
class CalibrationRecord:
    customer_id: str
    tenure: int
    churned: int
    cause: Optional[str] = None
    covariates: tuple = ()


@dataclass(frozen=True)
class ScoringRecord:
    customer_id: str
    tenure: int
    margin: float
    churn_score: Optional[float] = None
    score_v: Optional[float] = None
    score_inv: Optional[float] = None
    covariates: tuple = ()


def _not_utf8(path, err):
    return InvalidValue(None, None, reason='{} is not valid UTF-8 ({})'.format(path, err.reason))


def read_header(path):
    try:
        with open(path, encoding='utf-8', newline='') as f:
            line = f.readline()
    except UnicodeDecodeError as err:
        raise _not_utf8(path, err)
    return line.rstrip('\r\n').split(',') if line else []


def check_header(header, expected, path=None, covariates=False):
    """
    The header must start with exactly the expected columns; when covariates are allowed it may
    continue with x_1..x_m in order. Returns the covariate column names.
    """
    for i, name in enumerate(expected):
        if i >= len(header) or header[i] != name:
            if name not in header:
                raise MissingColumn(name, path)
            raise UnexpectedColumn(header[i], path)
    extra = header[len(expected):]
    if extra and not covariates:
        raise UnexpectedColumn(extra[0], path)
    for j, name in enumerate(extra):
        if name != 'x_{}'.format(j + 1):
            raise UnexpectedColumn(name, path)
    return extra


def _file_row(chunk, position):
    # header is row 1
    return int(chunk.index[position]) + 2


def _first_bad(chunk, bad, column):
    position = int(np.flatnonzero(np.asarray(bad))[0])
    raise InvalidValue(_file_row(chunk, position), column, chunk[column].iloc[position])


def _int_column(chunk, column):
    text = chunk[column].str.strip()
    bad = ~text.str.fullmatch(r'\d+')
    if bad.any():
        _first_bad(chunk, bad, column)
    return text.astype(np.int64)


def _flag_column(chunk, column):
    text = chunk[column].str.strip()
    bad = ~text.isin(['0', '1'])
    if bad.any():
        _first_bad(chunk, bad, column)
    return text.astype(np.int64)


def _float_column(chunk, column, low=None, high=None):
    values = pd.to_numeric(chunk[column].str.strip(), errors='coerce')
    bad = ~np.isfinite(values.to_numpy(dtype=float))
    if low is not None:
        bad |= (values < low).to_numpy()
    if high is not None:
        bad |= (values > high).to_numpy()
    if bad.any():
        _first_bad(chunk, bad, column)
    return values.astype(float)


def _id_column(chunk, seen):
    ids = chunk['customer_id']
    empty = ids.str.strip() == ''
    if empty.any():
        _first_bad(chunk, empty, 'customer_id')
    repeated = ids.duplicated() | ids.isin(seen)
    if repeated.any():
        position = int(np.flatnonzero(repeated.to_numpy())[0])
        raise DuplicateCustomerId(ids.iloc[position], _file_row(chunk, position))
    seen.update(ids)
    return ids


def _chunks(path, chunksize):
    try:
        for chunk in pd.read_csv(path, dtype=str, keep_default_na=False, chunksize=chunksize, encoding='utf-8'):
            yield chunk
    except pd.errors.ParserError as err:
        raise InvalidValue(None, None, reason='{}: {}'.format(path, err))
    except UnicodeDecodeError as err:
        raise _not_utf8(path, err)


def _stream(path, validate, chunksize):
    seen = set()
    total = 0
    for chunk in _chunks(path, chunksize):
        frame = validate(chunk)
        frame.insert(0, 'customer_id', _id_column(chunk, seen))
        total += len(frame)
        yield frame
    logging.info('read {} validated rows from {}'.format(total, path))


def read_calibration(path, mode='single', chunksize=CHUNKSIZE):
    """
    input: calibration CSV customer_id,tenure,churned[,cause][,x_1..x_m]
    output: generator of validated DataFrames (tenure/churned as int, covariates as float)
    """
    if mode not in MODES:
        raise InvalidSpec('mode must be one of {}'.format(MODES))
    expected = CALIBRATION_COLUMNS + (['cause'] if mode == 'competing' else [])
    covariates = check_header(read_header(path), expected, path, covariates=True)

    def validate(chunk):
        frame = pd.DataFrame({'tenure': _int_column(chunk, 'tenure'), 'churned': _flag_column(chunk, 'churned')})
        if mode == 'competing':
            cause = chunk['cause'].str.strip()
            churned = frame['churned'] == 1
            bad = (churned & ~cause.isin(CAUSES)) | (~churned & (cause != ''))
            if bad.any():
                _first_bad(chunk, bad, 'cause')
            frame['cause'] = cause
        for column in covariates:
            frame[column] = _float_column(chunk, column)
        return frame

    return _stream(path, validate, chunksize)


def read_histories(path, chunksize=CHUNKSIZE):
    check_header(read_header(path), HISTORY_COLUMNS, path)

    def validate(chunk):
        return pd.DataFrame({'duration': _int_column(chunk, 'duration'), 'churned': _flag_column(chunk, 'churned')})

    return _stream(path, validate, chunksize)


def read_scoring(path, mode='single', chunksize=CHUNKSIZE):
    """
    input: scoring CSV in one of the SCORING_COLUMNS layouts ('odds' adds x_1..x_m)
    output: generator of validated DataFrames; customer ids must be unique across the file
    """
    if mode not in SCORING_COLUMNS:
        raise InvalidSpec('mode must be one of {}'.format(sorted(SCORING_COLUMNS)))
    covariates = check_header(read_header(path), SCORING_COLUMNS[mode], path, covariates=(mode == 'odds'))

    def validate(chunk):
        frame = pd.DataFrame({'tenure': _int_column(chunk, 'tenure')})
        if mode == 'single':
            frame['churn_score'] = _float_column(chunk, 'churn_score', 0.0, 1.0)
        elif mode == 'competing':
            frame['score_v'] = _float_column(chunk, 'score_v', 0.0, 1.0)
            frame['score_inv'] = _float_column(chunk, 'score_inv', 0.0, 1.0)
            # slack for two scores each rounded to FLOAT_FORMAT
            over = (frame['score_v'] + frame['score_inv'] > 1.0 + 1e-6).to_numpy()
            if over.any():
                position = int(np.flatnonzero(over)[0])
                raise InvalidValue(_file_row(chunk, position), 'score_v+score_inv',
                                   frame['score_v'].iloc[position] + frame['score_inv'].iloc[position],
                                   'scores of the two causes must sum to at most 1')
        frame['margin'] = _float_column(chunk, 'margin')
        for column in covariates:
            frame[column] = _float_column(chunk, column)
        return frame

    return _stream(path, validate, chunksize)


def records(frames, record_type=ScoringRecord):
    # row-at-a-time view of a validated stream
    for frame in frames:
        covariate_names = [c for c in frame.columns if c.startswith('x_')]
        for row in frame.to_dict('records'):
            covariates = tuple(row.pop(c) for c in covariate_names)
            yield record_type(covariates=covariates, **{k: v for k, v in row.items()
                                                        if k in record_type.__dataclass_fields__})


def write_table(path, frame):
    target = sys.stdout if path == '-' else path
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def write_projections(path, frames, competing=False):
    """
    Streams projection chunks to one CSV, header first, columns in fixed order.
    """
    columns = COMPETING_PROJECTION_COLUMNS if competing else PROJECTION_COLUMNS
    written = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(','.join(columns) + '\n')
        for frame in frames:
            frame[columns].to_csv(f, index=False, header=False, float_format=FLOAT_FORMAT, lineterminator='\n')
            written += len(frame)
    logging.info('wrote {} projections to {}'.format(written, path))
    return written


def read_projections(path, competing=False):
    columns = COMPETING_PROJECTION_COLUMNS if competing else PROJECTION_COLUMNS
    check_header(read_header(path), columns, path)
    return pd.read_csv(path, dtype={'customer_id': str}, keep_default_na=False)
