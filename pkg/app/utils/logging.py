import structlog
import logging
import sys
from typing import Any, Dict, Optional

def setup_logging(level: str = "INFO"):
    """Setup structured logging configuration"""

    # Configure structlog
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer()
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    # stdout carries command output, logs go to stderr
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        force=True,
    )

def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    """Get a structured logger instance"""
    return structlog.get_logger(name)

def log_llm_call(logger: structlog.stdlib.BoundLogger,
                 backend: str,
                 tag: str,
                 attempt: int,
                 digest: str,
                 duration: Optional[float] = None,
                 outcome: str = "ok"):
    """Log one chat-completion call with structured data"""
    logger.debug(
        "LLM call",
        backend=backend,
        tag=tag,
        attempt=attempt,
        digest=digest,
        duration=duration,
        outcome=outcome
    )

def log_vote(logger: structlog.stdlib.BoundLogger,
             stage: str,
             record_id: str,
             item: str,
             round_no: int,
             tally: Dict[str, int],
             outcome: str):
    """Log a voting round with structured data"""
    logger.info(
        "Vote",
        stage=stage,
        record_id=record_id,
        item=item,
        round=round_no,
        tally=tally,
        outcome=outcome
    )

def log_dropped(logger: structlog.stdlib.BoundLogger,
                reason: str,
                record_id: Optional[str] = None,
                **details: Any):
    """Log a dropped item (trigger, type, role or filler) with the reason"""
    logger.info(
        "Dropped",
        reason=reason,
        record_id=record_id,
        **details
    )

def log_quarantine(logger: structlog.stdlib.BoundLogger,
                   record_id: str,
                   stage: str,
                   error_type: str,
                   error_message: str):
    """Log a record moved to the quarantine sidecar"""
    logger.warning(
        "Record quarantined",
        record_id=record_id,
        stage=stage,
        error_type=error_type,
        error_message=error_message
    )

def log_error(logger: structlog.stdlib.BoundLogger,
              error_type: str,
              error_message: str,
              context: Optional[Dict[str, Any]] = None):
    """Log error with structured data"""
    logger.error(
        "Error occurred",
        error_type=error_type,
        error_message=error_message,
        context=context or {}
    )
