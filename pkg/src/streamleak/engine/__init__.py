"""Miniature pipelined stream engine with sealed shared buffers."""
from .crypto import AuthFailure, Ciphertext, Sealer, decrypt, encrypt
from .mitigations import NotAChain, batch_stage, fuse_stages, pad_stage
from .operators import OperatorSpec, OperatorState, apply_operator, init_state
from .pipeline import (
    PipelineSpec,
    PipelineStall,
    RunHandle,
    RunOptions,
    Source,
    StageError,
    StageSpec,
    run_pipeline,
    run_reference,
    stage,
)
from .records import EventRecord, make_record
from .ringbuffer import EMPTY, RingBuffer, ring_pop, ring_push
