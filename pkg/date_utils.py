from datetime import datetime, date, timedelta
from numbers import Real
from typing import Iterable, Union

import numpy as np
from dateutil import parser

SECONDS_PER_DAY = 86400.0

class DateUtils:
    @staticmethod
    def to_datetime(value: Union[str, int, float, datetime, date]) -> datetime:
        if isinstance(value, datetime):
            return value
        elif isinstance(value, date):
            return datetime.combine(value, datetime.min.time())
        elif isinstance(value, (int, float)):
            return datetime.fromtimestamp(value)
        elif isinstance(value, str):
            return parser.parse(value)
        else:
            raise ValueError(f"Unsupported type: {type(value)}")

    @staticmethod
    def days_between(start, end) -> float:
        """Signed difference end - start in (fractional) days."""
        delta = DateUtils.to_datetime(end) - DateUtils.to_datetime(start)
        return delta.total_seconds() / SECONDS_PER_DAY

    @staticmethod
    def day_offsets(values: Iterable) -> np.ndarray:
        """
        Time coordinates in days relative to the first value.

        Plain numbers are taken to be day counts already; dates, datetimes and date strings
        are converted through to_datetime.
        """
        values = list(values)
        if not values:
            return np.zeros(0)
        if all(isinstance(v, Real) and not isinstance(v, bool) for v in values):
            days = np.asarray(values, dtype=float)
            return days - days[0]
        origin = values[0]
        return np.array([DateUtils.days_between(origin, v) for v in values])

    @staticmethod
    def date_range(start, count: int, step: timedelta = timedelta(days=1)) -> list:
        first = DateUtils.to_datetime(start)
        return [first + i * step for i in range(count)]

    @staticmethod
    def now() -> datetime:
        return datetime.now()
