import asyncio
from concurrent.futures import ThreadPoolExecutor
from typing import IO, Any, Awaitable, Callable, Generic, List, Optional, Sequence, Tuple, TypeVar

from pydantic import BaseModel

from app.exceptions import ConfigError
from app.models.corpus import SentenceRecord
from app.monitoring.metrics import record_processed
from app.utils.jsonl import write_records
from app.utils.logging import get_logger, log_quarantine

logger = get_logger(__name__)

R = TypeVar("R")


class QuarantineEntry(BaseModel):
    """A record a pipeline could not finish, with the error that stopped it"""

    record_id: str
    stage: str
    error_type: str
    message: str
    record: dict


class BatchRunner(Generic[R]):
    """Run an async handler over records with bounded parallelism, results in input order"""

    def __init__(self, parallelism: int = 4):
        if parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        self.parallelism = parallelism
        # CPU-bound scoring runs off the event loop
        self.executor = ThreadPoolExecutor(max_workers=parallelism)

    async def offload(self, fn: Callable[..., Any], *args: Any) -> Any:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self.executor, fn, *args)

    async def run(self, records: Sequence[SentenceRecord],
                  handler: Callable[[SentenceRecord], Awaitable[R]],
                  stage: str) -> Tuple[List[Optional[R]], List[QuarantineEntry]]:
        semaphore = asyncio.Semaphore(self.parallelism)

        async def process(record: SentenceRecord) -> Tuple[Optional[R], Optional[QuarantineEntry]]:
            async with semaphore:
                try:
                    result = await handler(record)
                except ConfigError:
                    raise
                except Exception as e:
                    log_quarantine(logger, record.id, stage, type(e).__name__, str(e))
                    record_processed(stage, "quarantined")
                    return None, QuarantineEntry(
                        record_id=record.id,
                        stage=stage,
                        error_type=type(e).__name__,
                        message=str(e),
                        record=record.model_dump(mode="json", by_alias=True),
                    )
                record_processed(stage, "ok")
                return result, None

        outcomes = await asyncio.gather(*(process(record) for record in records))
        results = [result for result, _ in outcomes]
        quarantine = [entry for _, entry in outcomes if entry is not None]
        logger.info("Batch finished", stage=stage, records=len(records), quarantined=len(quarantine))
        return results, quarantine

    def close(self):
        self.executor.shutdown(wait=True)

    async def __aenter__(self) -> "BatchRunner[R]":
        return self

    async def __aexit__(self, *exc_info: Any) -> None:
        self.close()


def write_quarantine(entries: Sequence[QuarantineEntry], sink: IO[bytes]) -> int:
    return write_records((entry.model_dump(mode="json") for entry in entries), sink)
