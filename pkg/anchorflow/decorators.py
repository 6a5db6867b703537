#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/decorators.py

from typing import Callable, Dict, List, Tuple, Union

import functools
import logging
import time
from abc import ABC, abstractmethod

import numpy as np

from anchorflow.errors import NonFiniteError

__all__ = ['AbstractOpDecorator', 'FiniteGuard', 'CallRecorder', 'Timed']
_WRAPPER_ASSIGNMENTS = (*functools.WRAPPER_ASSIGNMENTS, '__code__')

logger = logging.getLogger(__name__)


class AbstractOpDecorator(ABC):
    """Abstract class for the decorators that wrap anchorflow operations.
    Inherit this class and implement `invoke`.
    The decorator can be used with or without options.
    Example usage:
    >>> class Twice(AbstractOpDecorator):
    ...     def invoke(self, *args, **kwargs):
    ...         return 2 * self.decorated_object(*args, **kwargs)
    ...
    >>> @Twice
    ... def norm(x):
    ...     return abs(x)
    ...
    >>> norm(-3)
    6
    >>> norm.decorated_object(-3)
    3
    >>> norm
    @Twice -> norm
    """
    # class attributes
    _deco_args: Tuple = ()
    _deco_kwargs: Dict = {}
    _decorated_obj: Callable = None

    @property
    def decorated_object(self) -> Callable:
        """
        Returns the wrapped operation.
        :return: The decorated/wrapped function
        :rtype: callable
        """
        return self._decorated_obj

    @property
    def decorator_options(self) -> Tuple[Tuple, Dict]:
        """Return the options given when the decorator was created
        :return: The options; (arguments, keyword arguments)
        :rtype: tuple, dict
        """
        return self._deco_args, self._deco_kwargs

    def __repr__(self) -> str:
        """<@><class name><(options)>< -> decorated function>"""
        at, func, options = '', '', ''
        class_name = self.__class__.__qualname__
        args = ', '.join('{0}'.format(repr(arg)) for arg in self._deco_args)
        kwargs = ', '.join('{0}={1}'.format(key, repr(val))
                           for key, val in self._deco_kwargs.items())
        if args or kwargs:
            args = "{0}, ".format(args) if args and kwargs else args
            options = '({0}{1})'.format(args, kwargs)
        if hasattr(self, '__name__'):
            at, func = '@', ' -> {0}'.format(self.__name__)
        return '{0}{1}{2}{3}'.format(at, class_name, options, func)

    def __init__(self, *args: object, **kwargs: object) -> None:
        """A leading callable is the wrapped operation,
          everything else is stored as decorator options.
        :param args: Optional callable followed by options
        :param kwargs: key=`value` options
        """
        function, args = self._pop_callable(*args)

        # always wrap the innermost operation
        if isinstance(function, type(self)):
            function = function.decorated_object

        if self._decorated_obj is None:
            self.set_decorator_options(*args, **kwargs)

        if callable(function) and self._decorated_obj is None:
            self._decorate(function)

    def __call__(self, *args: object, **kwargs: object
                 ) -> Union[object, Callable]:
        """Decorate a callable on first use with options,
          afterwards forward every call to `invoke`.
        """
        if self._decorated_obj is None:
            function, args = self._pop_callable(*args)
            if isinstance(function, type(self)):
                function = function.decorated_object
            if callable(function):
                self._decorate(function)
                return self  # don't invoke
        return self.invoke(*args, **kwargs)

    @staticmethod
    def _pop_callable(*args: object) -> Tuple[Union[Callable, None], Tuple]:
        function = None
        if args and callable(args[0]):
            function, *args = args
        return function, tuple(args)

    def _decorate(self, function: Callable) -> None:
        """Set the given function as the decorated function."""
        functools.update_wrapper(self, function, _WRAPPER_ASSIGNMENTS)
        self._decorated_obj = function

    def set_decorator_options(self, *args: object, **kwargs: object) -> None:
        """Set or override the options of the decorator."""
        self._deco_args = args
        self._deco_kwargs = kwargs

    @abstractmethod
    def invoke(self, *args: object, **kwargs: object) -> object:
        """Called for every call of the decorated operation."""
        return self.decorated_object(*args, **kwargs)


class FiniteGuard(AbstractOpDecorator):
    """Raise :class:`NonFiniteError` when an op returns NaN or Inf.
    Works on anything exposing ``.data`` (a Tensor), arrays and floats.
    >>> @FiniteGuard
    ... def inverse(x):
    ...     return 1.0 / x
    ...
    >>> inverse(4.0)
    0.25
    """
    def invoke(self, *args: object, **kwargs: object) -> object:
        result = self.decorated_object(*args, **kwargs)
        values = (result if isinstance(result, (np.ndarray, np.generic))
                  else getattr(result, 'data', result))
        with np.errstate(invalid='ignore'):
            finite = np.all(np.isfinite(values))
        if not finite:
            raise NonFiniteError(
                '{0} produced non-finite values'.format(self.__name__))
        return result


class CallRecorder(AbstractOpDecorator):
    """Count the calls of the wrapped callable and keep their arguments.
    >>> reader = CallRecorder(lambda index: index * 2)
    >>> reader(1), reader(5)
    (2, 10)
    >>> reader.call_count, reader.calls[1]
    (2, ((5,), {}))
    """
    def __init__(self, *args: object, **kwargs: object) -> None:
        super(CallRecorder, self).__init__(*args, **kwargs)
        self.calls: List[Tuple[Tuple, Dict]] = []

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def reset(self) -> None:
        self.calls = []

    def invoke(self, *args: object, **kwargs: object) -> object:
        self.calls.append((args, kwargs))
        return self.decorated_object(*args, **kwargs)


class Timed(AbstractOpDecorator):
    """Log the wall time of every call.
    The optional first option is the label used in the log line.
    """
    def invoke(self, *args: object, **kwargs: object) -> object:
        deco_args, _ = self.decorator_options
        label = deco_args[0] if deco_args else self.__name__
        start = time.perf_counter()
        try:
            return self.decorated_object(*args, **kwargs)
        finally:
            logger.info('%s finished in %.2fs',
                        label, time.perf_counter() - start)


if __name__ == '__main__':
    import doctest
    test_results = doctest.testmod()
    print(test_results)
