from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile
import time
from functools import wraps
from pathlib import Path
from typing import Callable, Union

# Dedicated registry so repeated runs in one process never clash with the default one
REGISTRY = CollectorRegistry()

LLM_REQUESTS = Counter(
    'mtee_llm_requests_total',
    'Total chat-completion requests',
    ['backend', 'outcome'],
    registry=REGISTRY
)

LLM_REQUEST_DURATION = Histogram(
    'mtee_llm_request_duration_seconds',
    'Chat-completion request duration in seconds',
    ['backend'],
    registry=REGISTRY
)

PARSE_FAILURES = Counter(
    'mtee_parse_failures_total',
    'Model outputs that failed to parse',
    ['backend'],
    registry=REGISTRY
)

RECORDS_PROCESSED = Counter(
    'mtee_records_processed_total',
    'Sentence records processed by a pipeline',
    ['pipeline', 'outcome'],
    registry=REGISTRY
)

VOTE_ROUNDS = Histogram(
    'mtee_vote_rounds',
    'Voting rounds needed to settle an item',
    ['stage'],
    buckets=(1, 2, 3, 4, 5, 10),
    registry=REGISTRY
)

def track_llm_request(func: Callable) -> Callable:
    """Decorator to track chat-completion metrics; the first argument must expose `name`"""
    @wraps(func)
    async def wrapper(backend, *args, **kwargs):
        start_time = time.time()

        try:
            result = await func(backend, *args, **kwargs)
            LLM_REQUESTS.labels(backend=backend.name, outcome="ok").inc()
            return result
        except Exception as e:
            LLM_REQUESTS.labels(backend=backend.name, outcome=type(e).__name__).inc()
            raise
        finally:
            LLM_REQUEST_DURATION.labels(backend=backend.name).observe(time.time() - start_time)

    return wrapper

def record_parse_failure(backend: str):
    """Record an unparseable model output"""
    PARSE_FAILURES.labels(backend=backend).inc()

def record_processed(pipeline: str, outcome: str):
    """Record a record finishing a pipeline ("ok" or "quarantined")"""
    RECORDS_PROCESSED.labels(pipeline=pipeline, outcome=outcome).inc()

def record_vote_rounds(stage: str, rounds: int):
    VOTE_ROUNDS.labels(stage=stage).observe(rounds)

def write_metrics(path: Union[str, Path]):
    """Write the registry to a Prometheus text file"""
    write_to_textfile(str(path), REGISTRY)
