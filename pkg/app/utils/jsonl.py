import json
from functools import partial
from typing import IO, Any, Callable, Iterable, Iterator, Mapping, Tuple, Type

import jsonlines

from app.exceptions import LineError

# compact, key order as given, raw UTF-8
_dumps = partial(json.dumps, ensure_ascii=False, separators=(",", ":"))


class _LineCounter:
    """Iterator over a stream that remembers the 1-based number of the last line read"""

    def __init__(self, source: Iterable[Any]):
        self._lines = iter(source)
        self.line = 0

    def __iter__(self) -> "_LineCounter":
        return self

    def __next__(self) -> Any:
        value = next(self._lines)
        self.line += 1
        return value


def read_records(source: Iterable[Any], error_cls: Type[LineError]) -> Iterator[Tuple[int, dict]]:
    """Yield (line number, object) for every non-blank line of a JSON-lines stream"""
    counter = _LineCounter(source)
    reader = jsonlines.Reader(counter)
    try:
        for obj in reader.iter(type=dict, skip_empty=True):
            yield counter.line, obj
    except jsonlines.InvalidLineError as exc:
        raise error_cls(f"malformed line: {exc}", line=exc.lineno) from exc


def write_records(records: Iterable[Mapping[str, Any]], sink: IO[bytes],
                  dumps: Callable[[Any], str] = _dumps) -> int:
    """Write one compact JSON object per line to a binary sink, returning bytes written"""
    written = 0
    writer = jsonlines.Writer(sink, dumps=dumps, flush=False)
    for record in records:
        written += len(dumps(record).encode("utf-8")) + 1
        writer.write(record)
    return written

