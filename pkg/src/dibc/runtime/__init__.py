from .messages import Kind, Message
from .pipeline import PipelineConfig, PipelineResult, partition_data, run_pipeline

__all__ = [
    "Kind",
    "Message",
    "PipelineConfig",
    "PipelineResult",
    "partition_data",
    "run_pipeline",
]
