from retree.ingest.records import (
    EmptyRecords,
    IndexOutOfRange,
    IngestError,
    PathConflict,
    RecordError,
    TrajectoryRecord,
    assemble_tree,
    group_by_query,
    read_records,
    tree_to_records,
    write_records,
)
from retree.ingest.sampler import EndpointError, SamplerConfig, sample_branched
from retree.ingest.verify import integer_verifier, verify_integer_answer

__all__ = [
    "EmptyRecords",
    "EndpointError",
    "IndexOutOfRange",
    "IngestError",
    "PathConflict",
    "RecordError",
    "SamplerConfig",
    "TrajectoryRecord",
    "assemble_tree",
    "group_by_query",
    "integer_verifier",
    "read_records",
    "sample_branched",
    "tree_to_records",
    "verify_integer_answer",
    "write_records",
]
